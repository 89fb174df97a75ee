#pragma once

// Shared JSON helpers for checkpoint/task records. Doubles survive the
// round-trip bit-exactly (shortest-representation printing on write, exact
// binary64 parse on read).

#include <json.hpp>

#include "arena/linalg.hpp"

namespace arena::detail {

inline nlohmann::json mat_to_json(const Matrix& m) {
    nlohmann::json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = m.raw();
    return j;
}

inline Matrix mat_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols)
        throw ConfigError("matrix record: data length does not match declared shape");
    Matrix m(rows, cols);
    m.raw() = std::move(data);
    return m;
}

}  // namespace arena::detail
