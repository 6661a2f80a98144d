// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace reagent
{

/// One optimizer step.
struct MetricsRecord
{
    std::uint64_t step = 0;
    double objective = 0.0;
    double mean_reward = 0.0;
    double mean_rule = 0.0;
    double mean_model = 0.0;
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    double grad_norm = 0.0;
    std::uint64_t judge_failures = 0;

    auto operator==(const MetricsRecord&) const -> bool = default;
};

auto serialize_metrics(const MetricsRecord& record) -> std::string;
/// Throws DecodeError naming the offending field.
auto deserialize_metrics(std::string_view line) -> MetricsRecord;

/// Append-only, single writer. Each record is flushed as one complete line.
class MetricsWriter
{
  public:
    /// `truncate` starts a fresh stream; otherwise records are appended.
    MetricsWriter(const std::filesystem::path& path, bool truncate);

    void write(const MetricsRecord& record);

  private:
    std::ofstream _out;
};

struct MetricsReadResult
{
    std::vector<MetricsRecord> records;
    bool torn_tail = false; // the last line was incomplete and was skipped
};

auto read_metrics(const std::filesystem::path& path) -> MetricsReadResult;

/// Rewrites `path` keeping only records with step < `step`; used when resuming.
void truncate_metrics(const std::filesystem::path& path, std::uint64_t step);

} // namespace reagent
