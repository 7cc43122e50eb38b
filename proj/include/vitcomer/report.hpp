// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace vitcomer {

// Line-oriented check report: one `name: status: value: tolerance` line per
// check. Exit code 0 iff every check passed.
struct Report {
    struct Check {
        std::string name;
        bool pass = false;
        std::string value;
        std::string tolerance;
    };
    std::vector<Check> checks;

    void add(const std::string& name, bool pass, const std::string& value, const std::string& tolerance) {
        checks.push_back({name, pass, value, tolerance});
    }

    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }

    void print(std::ostream& os = std::cout) const {
        for (const auto& c : checks)
            os << c.name << ": " << (c.pass ? "PASS" : "FAIL") << ": " << c.value << ": " << c.tolerance << "\n";
    }

    int exit_code() const { return all_pass() ? 0 : 1; }
};

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

} // namespace vitcomer
