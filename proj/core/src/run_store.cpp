#include "iqb/run_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "iqb/error.hpp"
#include "json_io.hpp"
#include "text_util.hpp"

namespace iqb::experiment {
namespace {

namespace fs = std::filesystem;
using detail::Json;

void check_invariant(const RunRecord& r) {
  if (r.run_id.empty()) throw InvalidArgument("run record without run_id");
  if (r.status == RunStatus::kOk && r.metrics.empty()) {
    throw InvalidArgument("run " + r.run_id + ": ok status requires metrics");
  }
  if (r.status == RunStatus::kFailed && !r.metrics.empty()) {
    throw InvalidArgument("run " + r.run_id + ": failed run carries metrics");
  }
}

// Appends bytes and fsyncs before returning.
void durable_append(const fs::path& path, std::string_view bytes) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
  }
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw IoError("write " + path.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    const int err = errno;
    ::close(fd);
    throw IoError("fsync " + path.string() + ": " + std::strerror(err));
  }
  ::close(fd);
}

void sync_directory(const fs::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

double metric_value(const Json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    throw ParseError("bad metric value '" + s + "'");
  }
  if (v.is_null()) return std::nan("");
  return v.get<double>();
}

}  // namespace

std::string_view to_string(RunStatus status) {
  return status == RunStatus::kOk ? "ok" : "failed";
}

RunStatus parse_run_status(std::string_view text) {
  if (text == "ok") return RunStatus::kOk;
  if (text == "failed") return RunStatus::kFailed;
  throw ParseError("unknown run status '" + std::string(text) + "'");
}

std::string record_to_json(const RunRecord& r) {
  Json metrics = Json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = detail::number_or_sentinel(v);
  Json j = {{"run_id", r.run_id},
            {"dataset_variant", r.dataset_variant},
            {"provider", r.provider},
            {"status", std::string(to_string(r.status))},
            {"metrics", metrics},
            {"avg_size_mb", r.avg_size_mb},
            {"started_at", r.started_at},
            {"finished_at", r.finished_at}};
  if (!r.diagnostics.empty()) j["diagnostics"] = r.diagnostics;
  return j.dump();
}

RunRecord record_from_json(std::string_view line) {
  RunRecord r;
  try {
    const auto j = Json::parse(line);
    r.run_id = j.at("run_id").get<std::string>();
    r.dataset_variant = j.at("dataset_variant").get<std::string>();
    r.provider = j.at("provider").get<std::string>();
    r.status = parse_run_status(j.at("status").get<std::string>());
    if (j.contains("metrics")) {
      for (const auto& [k, v] : j.at("metrics").items()) r.metrics[k] = metric_value(v);
    }
    r.avg_size_mb = j.value("avg_size_mb", 0.0);
    r.started_at = j.value("started_at", std::string());
    r.finished_at = j.value("finished_at", std::string());
    r.diagnostics = j.value("diagnostics", std::string());
  } catch (const Json::exception& e) {
    throw ParseError(std::string("run record: ") + e.what());
  }
  return r;
}

bool RunFilter::matches(const RunRecord& r) const {
  if (provider && r.provider != *provider) return false;
  if (dataset_variant && r.dataset_variant != *dataset_variant) return false;
  if (status && r.status != *status) return false;
  return true;
}

std::vector<RunRecord> read_journal(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("journal not found: " + path.string());
  std::string text = detail::read_text_file(path.string());
  const auto last_nl = text.rfind('\n');
  text.resize(last_nl == std::string::npos ? 0 : last_nl + 1);
  std::vector<RunRecord> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (detail::trim(line).empty()) return;
    try {
      out.push_back(record_from_json(line));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  });
  return out;
}

JournalStore::JournalStore(fs::path path)
    : path_(std::move(path)), index_path_(path_.string() + ".idx") {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  recover();
}

void JournalStore::recover() {
  std::string text;
  if (fs::exists(path_)) text = detail::read_text_file(path_.string());

  // Complete lines only; anything after the last newline is a torn write.
  const auto last_nl = text.rfind('\n');
  const std::uint64_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (complete < text.size()) {
    spdlog::warn("journal {}: discarding {} byte torn trailing record",
                 path_.string(), text.size() - complete);
    fs::resize_file(path_, complete);
    text.resize(complete);
  }

  offsets_.clear();
  std::uint64_t pos = 0;
  std::size_t line_no = 0;
  while (pos < complete) {
    const auto end = text.find('\n', pos);
    ++line_no;
    const std::string_view line(text.data() + pos, end - pos);
    if (!detail::trim(line).empty()) {
      RunRecord r;
      try {
        r = record_from_json(line);
      } catch (const ParseError& e) {
        throw ParseError(path_.string() + ": " + e.what(), line_no);
      }
      if (!offsets_.emplace(r.run_id, pos).second) {
        throw ParseError(path_.string() + ": duplicate run id " + r.run_id, line_no);
      }
    }
    pos = end + 1;
  }
  committed_ = complete;

  // Rebuild the sidecar when it does not list exactly the journal's records.
  bool index_ok = fs::exists(index_path_);
  if (index_ok) {
    std::size_t entries = 0;
    std::istringstream in(detail::read_text_file(index_path_.string()));
    std::string id;
    std::uint64_t off = 0;
    while (in >> id >> off) {
      auto it = offsets_.find(id);
      if (it == offsets_.end() || it->second != off) {
        index_ok = false;
        break;
      }
      ++entries;
    }
    index_ok = index_ok && entries == offsets_.size();
  }
  if (!index_ok && (fs::exists(index_path_) || !offsets_.empty())) {
    std::vector<std::pair<std::uint64_t, std::string>> ordered;
    for (const auto& [id, off] : offsets_) ordered.emplace_back(off, id);
    std::sort(ordered.begin(), ordered.end());
    std::string out;
    for (const auto& [off, id] : ordered) out += id + " " + std::to_string(off) + "\n";
    const fs::path tmp = index_path_.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      f << out;
    }
    durable_append(tmp, "");
    fs::rename(tmp, index_path_);
    sync_directory(index_path_.parent_path());
  }
}

void JournalStore::append(const RunRecord& record) {
  check_invariant(record);
  std::lock_guard lock(mutex_);
  if (offsets_.contains(record.run_id)) {
    throw InvalidArgument("duplicate run id " + record.run_id);
  }
  const std::string line = record_to_json(record) + "\n";
  const bool fresh = !fs::exists(path_);
  durable_append(path_, line);
  if (fresh) sync_directory(path_.parent_path());
  const std::uint64_t offset = committed_;
  committed_ += line.size();
  offsets_.emplace(record.run_id, offset);
  durable_append(index_path_, record.run_id + " " + std::to_string(offset) + "\n");
}

std::vector<RunRecord> JournalStore::list(const RunFilter& filter) const {
  std::lock_guard lock(mutex_);
  std::vector<RunRecord> out;
  if (committed_ == 0) return out;
  std::string text = detail::read_text_file(path_.string());
  text.resize(std::min<std::size_t>(text.size(), committed_));
  detail::for_each_line(text, [&](std::size_t, std::string_view line) {
    if (detail::trim(line).empty()) return;
    RunRecord r = record_from_json(line);
    if (filter.matches(r)) out.push_back(std::move(r));
  });
  return out;
}

std::optional<RunRecord> JournalStore::find(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  const auto it = offsets_.find(run_id);
  if (it == offsets_.end()) return std::nullopt;
  std::ifstream in(path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(it->second));
  std::string line;
  std::getline(in, line);
  return record_from_json(line);
}

bool JournalStore::contains(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  return offsets_.contains(run_id);
}

std::size_t JournalStore::size() const {
  std::lock_guard lock(mutex_);
  return offsets_.size();
}

std::string JournalStore::next_run_id(const std::string& base) const {
  std::lock_guard lock(mutex_);
  if (!offsets_.contains(base)) return base;
  for (int k = 1;; ++k) {
    std::string id = base + "-r" + std::to_string(k);
    if (!offsets_.contains(id)) return id;
  }
}

}  // namespace iqb::experiment
