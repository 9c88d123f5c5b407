#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace iqb::experiment {

enum class RunStatus { kOk, kFailed };

std::string_view to_string(RunStatus status);
RunStatus parse_run_status(std::string_view text);

// One (dataset variant x prediction provider) execution.
struct RunRecord {
  std::string run_id;
  std::string dataset_variant;
  std::string provider;
  // Present iff status is kOk.
  std::map<std::string, double> metrics;
  double avg_size_mb = 0.0;
  std::string started_at;   // ISO-8601 UTC
  std::string finished_at;  // ISO-8601 UTC
  RunStatus status = RunStatus::kOk;
  std::string diagnostics;  // failure details, empty for ok runs

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

std::string record_to_json(const RunRecord& record);
RunRecord record_from_json(std::string_view line);

struct RunFilter {
  std::optional<std::string> provider;
  std::optional<std::string> dataset_variant;
  std::optional<RunStatus> status;

  bool matches(const RunRecord& record) const;
};

// Reads a journal without opening it for writing; a torn trailing line is
// ignored. Used by read-only reporting.
std::vector<RunRecord> read_journal(const std::filesystem::path& path);

// Append-only journal of RunRecords: one JSON object per line in
// <path>, plus a "<path>.idx" sidecar of "run_id offset" lines. A torn
// trailing line left by a crash is discarded on open.
class JournalStore {
 public:
  explicit JournalStore(std::filesystem::path path);

  JournalStore(const JournalStore&) = delete;
  JournalStore& operator=(const JournalStore&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }

  // Durable (fsync'ed) on return. Throws InvalidArgument on a duplicate
  // run id and if the record violates the metrics/status invariant.
  void append(const RunRecord& record);

  // Records in append order.
  std::vector<RunRecord> list(const RunFilter& filter = {}) const;

  std::optional<RunRecord> find(const std::string& run_id) const;
  bool contains(const std::string& run_id) const;
  std::size_t size() const;

  // `base` if unused, otherwise "<base>-r<k>" for the smallest free k.
  std::string next_run_id(const std::string& base) const;

 private:
  void recover();

  std::filesystem::path path_;
  std::filesystem::path index_path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::uint64_t> offsets_;
  std::uint64_t committed_ = 0;  // bytes of complete lines
};

}  // namespace iqb::experiment
