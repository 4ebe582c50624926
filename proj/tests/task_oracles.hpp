#pragma once

// Independent ground-truth rules for the three task families: string
// slicing, 64-bit integer arithmetic, and Hinnant's civil-date day count.

#include <cstdint>
#include <sstream>
#include <string>

namespace task_oracles {

using i64 = std::int64_t;

inline std::string second_last_letters(const std::string& words) {
    std::string answer;
    std::stringstream ss(words);
    std::string w;
    while (ss >> w) answer.push_back(w[w.size() - 2]);
    return answer;
}

inline std::string quoted_words(const std::string& prompt) {
    const auto a = prompt.find('"');
    const auto b = prompt.rfind('"');
    return prompt.substr(a + 1, b - a - 1);
}

// "a+b=?" / "a-b=?" -> exact integer answer.
inline std::string arithmetic_answer(const std::string& prompt) {
    const auto op = prompt.find_first_of("+-", 1);
    const i64 a = std::stoll(prompt.substr(0, op));
    const i64 b = std::stoll(prompt.substr(op + 1, prompt.size() - op - 3));
    return std::to_string(prompt[op] == '+' ? a + b : a - b);
}

inline i64 days_from_civil(i64 y, i64 m, i64 d) {
    y -= m <= 2;
    const i64 era = (y >= 0 ? y : y - 399) / 400;
    const i64 yoe = y - era * 400;
    const i64 doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const i64 doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

inline void civil_from_days(i64 z, i64& y, i64& m, i64& d) {
    z += 719468;
    const i64 era = (z >= 0 ? z : z - 146096) / 146097;
    const i64 doe = z - era * 146097;
    const i64 yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const i64 doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const i64 mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = yoe + era * 400 + (m <= 2);
}

inline void parse_mdy(const std::string& s, i64& y, i64& m, i64& d) {
    m = std::stoll(s.substr(0, 2));
    d = std::stoll(s.substr(3, 2));
    y = std::stoll(s.substr(6, 4));
}

// Tomorrow of the date in a date-task prompt, via the day-count route.
inline std::string tomorrow_answer(const std::string& prompt) {
    i64 y, m, d;
    parse_mdy(prompt.substr(12, 10), y, m, d);
    i64 ty, tm, td;
    civil_from_days(days_from_civil(y, m, d) + 1, ty, tm, td);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02lld/%02lld/%04lld", static_cast<long long>(tm),
                  static_cast<long long>(td), static_cast<long long>(ty));
    return buf;
}

}  // namespace task_oracles
