// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line-delimited, schema-versioned records. One JSON object per line; every
// object carries "schema" and "version" fields.

#include <reagent/core_types.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace reagent
{

inline constexpr int kRecordVersion = 1;

auto serialize_task(const Task& task) -> std::string;
auto deserialize_task(std::string_view line) -> Task;

auto serialize_trajectory(const Trajectory& t) -> std::string;
auto deserialize_trajectory(std::string_view line) -> Trajectory;

auto serialize_judgment(const Judgment& j) -> std::string;
auto deserialize_judgment(std::string_view line) -> Judgment;

auto hex64(std::uint64_t value) -> std::string;
auto parse_hex64(std::string_view text) -> std::uint64_t;

/// Reads non-empty lines. A final line without a trailing newline is returned too.
auto read_lines(const std::filesystem::path& path) -> std::vector<std::string>;
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

auto load_tasks(const std::filesystem::path& path) -> std::vector<Task>;
void save_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks);
auto load_trajectories(const std::filesystem::path& path) -> std::vector<Trajectory>;
void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories);

} // namespace reagent
