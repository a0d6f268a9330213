// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace dcsst {

/// Flat UTF-8 `key = value` text. Blank lines and lines starting with '#'
/// are ignored; keys and values are trimmed. Duplicate keys are an error.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& entries);

std::size_t parse_size(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
/// Comma-separated list of non-negative integers.
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value);

std::string format_double(double v);
std::string format_size_list(const std::vector<std::size_t>& values);

}  // namespace dcsst
