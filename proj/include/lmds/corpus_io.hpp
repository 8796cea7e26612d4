#pragma once

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <zlib.h>

#include "json.hpp"
#include "lmds/error.hpp"
#include "lmds/parallel.hpp"
#include "lmds/utf8.hpp"

namespace lmds {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// One corpus record.
struct Document {
  std::string id;
  std::string text;
  std::string source_shard;
  std::map<std::string, std::string> meta;

  bool operator==(const Document&) const = default;
};

struct ShardDescriptor {
  fs::path path;
  bool compressed = false;
  std::optional<std::size_t> record_count;

  /// File name; used for synthesized ids and score/filter output names.
  std::string name() const { return path.filename().string(); }
};

inline bool has_shard_suffix(const fs::path& p) {
  const std::string name = p.filename().string();
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".jsonl") || ends_with(".jsonl.gz");
}

inline bool is_gzip_path(const fs::path& p) { return p.extension() == ".gz"; }

/// Ordered list of shards. Order is lexicographic by path so that seeded
/// operations over the set are reproducible.
struct ShardSet {
  static constexpr int kFormatVersion = 1;

  std::vector<ShardDescriptor> shards;
  int format_version = kFormatVersion;

  static ShardSet from_paths(std::vector<fs::path> paths) {
    std::sort(paths.begin(), paths.end());
    paths.erase(std::unique(paths.begin(), paths.end()), paths.end());
    ShardSet set;
    for (auto& p : paths) set.shards.push_back({p, is_gzip_path(p), std::nullopt});
    return set;
  }

  /// A directory expands to its *.jsonl / *.jsonl.gz files; a file is used as is.
  static ShardSet discover(const fs::path& input) {
    std::error_code ec;
    if (fs::is_directory(input, ec)) {
      std::vector<fs::path> paths;
      for (const auto& entry : fs::directory_iterator(input)) {
        if (entry.is_regular_file() && has_shard_suffix(entry.path()))
          paths.push_back(entry.path());
      }
      return from_paths(std::move(paths));
    }
    if (!fs::exists(input, ec)) fail(ErrorKind::io, "corpus input not found: " + input.string());
    return from_paths({input});
  }

  std::size_t size() const { return shards.size(); }
  bool empty() const { return shards.empty(); }
};

/// Character-window slice of a document. Offsets count code points.
struct Snippet {
  std::string doc_id;
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::size_t approx_token_budget = 0;

  bool operator==(const Snippet&) const = default;
};

struct IngestOptions {
  bool strict = false;            // malformed record becomes fatal
  bool check_unique_ids = true;   // duplicate ids are treated as malformed
};

struct RunSummary {
  std::size_t records_read = 0;     // non-blank records encountered
  std::size_t records_skipped = 0;  // malformed records skipped
  std::size_t shards = 0;
  double duration_seconds = 0.0;
  std::vector<std::string> skip_reasons;  // first few, for the report

  std::size_t documents() const { return records_read - records_skipped; }

  void note_skip(std::string reason) {
    ++records_skipped;
    if (skip_reasons.size() < 20) skip_reasons.push_back(std::move(reason));
  }

  void merge(const RunSummary& other) {
    records_read += other.records_read;
    records_skipped += other.records_skipped;
    shards += other.shards;
    for (const auto& r : other.skip_reasons) {
      if (skip_reasons.size() >= 20) break;
      skip_reasons.push_back(r);
    }
  }

  json to_json() const {
    return {{"records_read", records_read},
            {"records_skipped", records_skipped},
            {"documents", documents()},
            {"shards", shards},
            {"duration", duration_seconds},
            {"skip_reasons", skip_reasons}};
  }
};

// ---------------------------------------------------------------------------
// Line-level readers and writers (plain or gzip).

class LineReader {
 public:
  explicit LineReader(const fs::path& path) : path_(path) {
    file_ = gzopen(path.c_str(), "rb");
    if (file_ == nullptr) fail(ErrorKind::io, "cannot open shard: " + path.string());
    gzbuffer(file_, 1 << 17);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;
  ~LineReader() {
    if (file_ != nullptr) gzclose(file_);
  }

  /// Reads the next line without its terminator. Returns false at EOF.
  bool next(std::string& line) {
    line.clear();
    char buf[8192];
    for (;;) {
      if (gzgets(file_, buf, sizeof buf) == nullptr) {
        int err = 0;
        const char* msg = gzerror(file_, &err);
        if (err != Z_OK && err != Z_BUF_ERROR)
          fail(ErrorKind::io, "read failure in shard " + path_.string() + ": " + msg);
        return !line.empty();
      }
      line.append(buf);
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
      }
    }
  }

 private:
  fs::path path_;
  gzFile file_ = nullptr;
};

class LineWriter {
 public:
  LineWriter(const fs::path& path, bool compressed) : path_(path), compressed_(compressed) {
    if (compressed_) {
      gz_ = gzopen(path.c_str(), "wb6");
      if (gz_ == nullptr) fail(ErrorKind::io, "cannot create " + path.string());
    } else {
      out_.open(path, std::ios::binary | std::ios::trunc);
      if (!out_) fail(ErrorKind::io, "cannot create " + path.string());
    }
  }
  LineWriter(const LineWriter&) = delete;
  LineWriter& operator=(const LineWriter&) = delete;
  ~LineWriter() {
    if (gz_ != nullptr) gzclose(gz_);
  }

  void write_line(std::string_view line) {
    if (compressed_) {
      if (!line.empty() &&
          gzwrite(gz_, line.data(), static_cast<unsigned>(line.size())) == 0)
        fail(ErrorKind::io, "write failure: " + path_.string());
      if (gzputc(gz_, '\n') == -1) fail(ErrorKind::io, "write failure: " + path_.string());
    } else {
      out_.write(line.data(), static_cast<std::streamsize>(line.size()));
      out_.put('\n');
      if (!out_) fail(ErrorKind::io, "write failure: " + path_.string());
    }
  }

  void close() {
    if (compressed_) {
      if (gz_ != nullptr && gzclose(gz_) != Z_OK) {
        gz_ = nullptr;
        fail(ErrorKind::io, "write failure: " + path_.string());
      }
      gz_ = nullptr;
    } else if (out_.is_open()) {
      out_.close();
      if (!out_) fail(ErrorKind::io, "write failure: " + path_.string());
    }
  }

 private:
  fs::path path_;
  bool compressed_;
  gzFile gz_ = nullptr;
  std::ofstream out_;
};

inline std::vector<std::string> read_lines(const fs::path& path) {
  LineReader reader(path);
  std::vector<std::string> lines;
  std::string line;
  while (reader.next(line)) lines.push_back(line);
  return lines;
}

inline void write_text_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Record codec.

inline json document_to_json(const Document& doc) {
  json j = {{"id", doc.id}, {"text", doc.text}};
  if (!doc.meta.empty()) j["meta"] = doc.meta;
  return j;
}

/// Parses one record. On failure returns nullopt and fills `reason`.
inline std::optional<Document> parse_record(std::string_view line, std::string_view shard_name,
                                            std::size_t record_index, std::string& reason) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    reason = "not a JSON object";
    return std::nullopt;
  }
  auto text = j.find("text");
  if (text == j.end() || !text->is_string()) {
    reason = "missing or non-string \"text\"";
    return std::nullopt;
  }
  Document doc;
  // nlohmann accepts only valid UTF-8, but \u escapes can still encode lone
  // surrogates; check the decoded text explicitly.
  doc.text = text->get<std::string>();
  if (!utf8::is_valid(doc.text)) {
    reason = "text is not valid UTF-8";
    return std::nullopt;
  }
  auto id = j.find("id");
  if (id != j.end() && !id->is_null()) {
    if (!id->is_string() || id->get_ref<const std::string&>().empty()) {
      reason = "\"id\" must be a non-empty string";
      return std::nullopt;
    }
    doc.id = id->get<std::string>();
  } else {
    doc.id = std::string(shard_name) + "#" + std::to_string(record_index);
  }
  auto meta = j.find("meta");
  if (meta != j.end() && !meta->is_null()) {
    if (!meta->is_object()) {
      reason = "\"meta\" must be an object";
      return std::nullopt;
    }
    for (const auto& [k, v] : meta->items())
      doc.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  doc.source_shard = std::string(shard_name);
  return doc;
}

/// Sequential cursor over one shard's valid records.
class ShardCursor {
 public:
  ShardCursor(const ShardDescriptor& shard, const IngestOptions& options)
      : name_(shard.name()), options_(options), reader_(shard.path) {}

  /// Next valid document, or nullopt at end of shard. Malformed records are
  /// counted into `summary` (or thrown in strict mode).
  std::optional<Document> next(RunSummary& summary) {
    std::string line;
    while (reader_.next(line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::size_t index = index_++;
      ++summary.records_read;
      std::string reason;
      auto doc = parse_record(line, name_, index, reason);
      if (doc) return doc;
      std::string where = name_ + " record " + std::to_string(index) + ": " + reason;
      if (options_.strict) fail(ErrorKind::format, "malformed record in " + where);
      summary.note_skip(std::move(where));
    }
    return std::nullopt;
  }

 private:
  std::string name_;
  IngestOptions options_;
  LineReader reader_;
  std::size_t index_ = 0;
};

/// Restartable stream of documents in shard order then record order.
class DocumentStream {
 public:
  using value_type = Document;

  explicit DocumentStream(ShardSet shards, IngestOptions options = {})
      : shards_(std::move(shards)), options_(options) {
    reset();
  }

  void reset() {
    cursor_.reset();
    shard_index_ = 0;
    seen_ids_.clear();
    summary_ = {};
    started_ = std::chrono::steady_clock::now();
  }

  bool next(Document& out) {
    for (;;) {
      if (!cursor_) {
        if (shard_index_ >= shards_.size()) {
          summary_.duration_seconds = elapsed();
          return false;
        }
        cursor_ = std::make_unique<ShardCursor>(shards_.shards[shard_index_++], options_);
        ++summary_.shards;
      }
      auto doc = cursor_->next(summary_);
      if (!doc) {
        cursor_.reset();
        continue;
      }
      if (options_.check_unique_ids && !seen_ids_.insert(doc->id).second) {
        std::string where = doc->source_shard + ": duplicate id " + doc->id;
        if (options_.strict) fail(ErrorKind::format, where);
        summary_.note_skip(std::move(where));
        continue;
      }
      out = std::move(*doc);
      return true;
    }
  }

  std::vector<Document> read_all() {
    std::vector<Document> docs;
    Document d;
    while (next(d)) docs.push_back(std::move(d));
    return docs;
  }

  const RunSummary& summary() const { return summary_; }

 private:
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  }

  ShardSet shards_;
  IngestOptions options_;
  std::unique_ptr<ShardCursor> cursor_;
  std::size_t shard_index_ = 0;
  std::unordered_set<std::string> seen_ids_;
  RunSummary summary_;
  std::chrono::steady_clock::time_point started_;
};

inline std::vector<Document> ingest_shards(const ShardSet& shards, const IngestOptions& options = {},
                                           RunSummary* summary = nullptr) {
  DocumentStream stream(shards, options);
  auto docs = stream.read_all();
  if (summary != nullptr) *summary = stream.summary();
  return docs;
}

struct ShardContents {
  ShardDescriptor shard;
  std::vector<Document> documents;
};

/// Reads every shard with one worker per shard. The result (including
/// duplicate-id handling, applied afterwards in shard order) is identical to
/// a single DocumentStream pass for any worker count.
inline std::vector<ShardContents> read_shards_parallel(const ShardSet& shards, std::size_t workers,
                                                       const IngestOptions& options = {},
                                                       RunSummary* summary = nullptr) {
  const auto started = std::chrono::steady_clock::now();
  std::vector<ShardContents> contents(shards.size());
  std::vector<RunSummary> partial(shards.size());
  parallel_for(shards.size(), workers, [&](std::size_t i) {
    contents[i].shard = shards.shards[i];
    ShardCursor cursor(shards.shards[i], options);
    while (auto doc = cursor.next(partial[i])) contents[i].documents.push_back(std::move(*doc));
    partial[i].shards = 1;
  });

  RunSummary total;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < contents.size(); ++i) {
    total.merge(partial[i]);
    if (!options.check_unique_ids) continue;
    auto& docs = contents[i].documents;
    std::vector<Document> unique;
    unique.reserve(docs.size());
    for (auto& d : docs) {
      if (seen.insert(d.id).second) {
        unique.push_back(std::move(d));
        continue;
      }
      std::string where = d.source_shard + ": duplicate id " + d.id;
      if (options.strict) fail(ErrorKind::format, where);
      total.note_skip(std::move(where));
    }
    docs = std::move(unique);
  }
  total.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (summary != nullptr) *summary = total;
  return contents;
}

// ---------------------------------------------------------------------------
// Sampling.

/// Reservoir sampling (Algorithm R) over a pull source `next(T&) -> bool`.
/// Returns min(n, N) items; every element has inclusion probability n/N.
template <typename T, typename Next>
std::vector<T> reservoir_sample(Next&& next, std::size_t n, std::uint64_t seed) {
  if (n == 0) fail(ErrorKind::invalid_argument, "reservoir sample size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<T> reservoir;
  reservoir.reserve(std::min<std::size_t>(n, 1 << 16));
  T item;
  std::uint64_t seen = 0;
  while (next(item)) {
    if (seen < n) {
      reservoir.push_back(std::move(item));
    } else {
      std::uniform_int_distribution<std::uint64_t> pick(0, seen);
      const std::uint64_t j = pick(rng);
      if (j < n) reservoir[j] = std::move(item);
    }
    ++seen;
  }
  return reservoir;
}

inline std::vector<Document> reservoir_sample(DocumentStream& stream, std::size_t n,
                                              std::uint64_t seed) {
  return reservoir_sample<Document>([&](Document& d) { return stream.next(d); }, n, seed);
}

// ---------------------------------------------------------------------------
// Snippets.

struct SnippetConfig {
  std::size_t token_budget = 1500;
  std::size_t chars_per_token = 4;

  std::size_t window_chars() const { return token_budget * chars_per_token; }
};

/// Middle window of token_budget * chars_per_token characters (code points),
/// centered on the character midpoint. Shorter texts are passed whole.
inline Snippet extract_snippet(const Document& doc, const SnippetConfig& config = {}) {
  if (doc.text.empty()) fail(ErrorKind::invalid_argument, "empty document");
  if (config.token_budget == 0 || config.chars_per_token == 0)
    fail(ErrorKind::invalid_argument, "token budget and chars per token must be positive");

  const std::size_t length = utf8::length(doc.text);
  const std::size_t window = std::min(length, config.window_chars());
  const std::size_t start = (length - window) / 2;
  const std::size_t end = start + window;

  const std::size_t byte_start = utf8::byte_offset(doc.text, start);
  const std::size_t byte_end = end == length ? doc.text.size() : utf8::byte_offset(doc.text, end);

  return {doc.id, doc.text.substr(byte_start, byte_end - byte_start), start, end,
          config.token_budget};
}

inline json snippet_to_json(const Snippet& s) {
  return {{"doc_id", s.doc_id},
          {"text", s.text},
          {"char_start", s.char_start},
          {"char_end", s.char_end},
          {"approx_token_budget", s.approx_token_budget}};
}

inline Snippet snippet_from_json(const json& j) {
  try {
    return {j.at("doc_id").get<std::string>(), j.at("text").get<std::string>(),
            j.at("char_start").get<std::size_t>(), j.at("char_end").get<std::size_t>(),
            j.value("approx_token_budget", std::size_t{0})};
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed snippet record: ") + e.what());
  }
}

inline void write_snippets(const fs::path& path, const std::vector<Snippet>& snippets) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  LineWriter out(path, is_gzip_path(path));
  for (const auto& s : snippets) out.write_line(snippet_to_json(s).dump());
  out.close();
}

inline std::vector<Snippet> read_snippets(const fs::path& path) {
  std::vector<Snippet> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::format, "malformed snippet line in " + path.string());
    out.push_back(snippet_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writing shards.

struct WriteOptions {
  bool compress = false;
  std::string prefix = "shard";
};

inline std::string shard_file_name(const WriteOptions& options, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%05zu", index);
  return options.prefix + buf + (options.compress ? ".jsonl.gz" : ".jsonl");
}

/// Writes `next(Document&)`-pulled documents into fixed-size shards plus a
/// manifest.json. Existing shard files with the same prefix are replaced.
template <typename Next>
  requires std::invocable<Next&, Document&>
ShardSet write_shards(Next&& next, const fs::path& out_dir, std::size_t records_per_shard,
                      const WriteOptions& options = {}) {
  if (records_per_shard == 0) fail(ErrorKind::invalid_argument, "records_per_shard must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create output directory " + out_dir.string());
  if (fs::exists(out_dir, ec)) {
    for (const auto& entry : fs::directory_iterator(out_dir)) {
      const std::string name = entry.path().filename().string();
      if (has_shard_suffix(entry.path()) && name.rfind(options.prefix + "-", 0) == 0)
        fs::remove(entry.path());
    }
  }

  ShardSet result;
  json manifest_shards = json::array();
  auto write_manifest = [&](const std::string& status, const std::string& note) {
    json m = {{"format_version", ShardSet::kFormatVersion},
              {"status", status},
              {"shards", manifest_shards}};
    if (!note.empty()) m["note"] = note;
    write_text_file(out_dir / "manifest.json", m.dump(2) + "\n");
  };

  try {
    std::unique_ptr<LineWriter> writer;
    std::size_t in_shard = 0;
    auto finish_shard = [&] {
      if (!writer) return;
      writer->close();
      writer.reset();
      result.shards.back().record_count = in_shard;
      manifest_shards.push_back(
          {{"path", result.shards.back().name()}, {"records", in_shard}});
    };
    Document doc;
    while (next(doc)) {
      if (!writer || in_shard == records_per_shard) {
        finish_shard();
        const fs::path path = out_dir / shard_file_name(options, result.shards.size());
        result.shards.push_back({path, options.compress, std::nullopt});
        writer = std::make_unique<LineWriter>(path, options.compress);
        in_shard = 0;
      }
      writer->write_line(document_to_json(doc).dump());
      ++in_shard;
    }
    finish_shard();
  } catch (const Error& e) {
    json partial = json::array();
    for (const auto& s : result.shards) partial.push_back(s.name());
    manifest_shards = partial;
    try {
      write_manifest("failed", std::string("partial output, remove listed shards: ") + e.what());
    } catch (...) {
    }
    throw;
  }
  write_manifest("complete", "");
  return result;
}

inline ShardSet write_shards(const std::vector<Document>& docs, const fs::path& out_dir,
                             std::size_t records_per_shard, const WriteOptions& options = {}) {
  std::size_t i = 0;
  return write_shards(
      [&](Document& d) {
        if (i >= docs.size()) return false;
        d = docs[i++];
        return true;
      },
      out_dir, records_per_shard, options);
}

}  // namespace lmds
