#pragma once

// Dataset ingestion and resumable run state.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "activeprune/error.hpp"
#include "activeprune/util.hpp"

namespace activeprune {

using DocId = std::uint64_t;
using LabelId = std::int32_t;

struct Document {
  DocId id = 0;
  std::string text;
  std::optional<LabelId> label;

  friend bool operator==(const Document&, const Document&) = default;
};

inline bool has_visible_text(std::string_view text) {
  for (char c : text) {
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r' && c != '\v' && c != '\f') return true;
  }
  return false;
}

/// An immutable, id-indexed collection of documents.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::string name, std::vector<Document> documents,
          std::vector<std::string> label_names = {})
      : name_(std::move(name)), documents_(std::move(documents)), label_names_(std::move(label_names)) {
    if (documents_.empty()) throw Error(ErrorCode::kEmptyDataset, "dataset '" + name_ + "' has no documents");
    index_.reserve(documents_.size());
    for (std::size_t i = 0; i < documents_.size(); ++i) {
      const Document& d = documents_[i];
      if (!has_visible_text(d.text)) {
        throw Error(ErrorCode::kParse, "document " + std::to_string(d.id) + " has empty text",
                    static_cast<std::int64_t>(i + 1));
      }
      if (!index_.emplace(d.id, i).second) {
        throw Error(ErrorCode::kDuplicateId, "duplicate document id " + std::to_string(d.id),
                    static_cast<std::int64_t>(d.id));
      }
      if (d.label) {
        if (*d.label < 0) throw Error(ErrorCode::kParse, "negative label", static_cast<std::int64_t>(i + 1));
        if (!label_names_.empty() && static_cast<std::size_t>(*d.label) >= label_names_.size()) {
          throw Error(ErrorCode::kParse,
                      "label " + std::to_string(*d.label) + " has no name in the label list",
                      static_cast<std::int64_t>(i + 1));
        }
      }
    }
  }

  const std::string& name() const noexcept { return name_; }
  const std::vector<Document>& documents() const noexcept { return documents_; }
  const std::vector<std::string>& label_names() const noexcept { return label_names_; }
  std::size_t size() const noexcept { return documents_.size(); }

  bool contains(DocId id) const { return index_.contains(id); }

  const Document& at(DocId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown document id " + std::to_string(id));
    return documents_[it->second];
  }

  std::size_t position(DocId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown document id " + std::to_string(id));
    return it->second;
  }

  std::set<DocId> ids() const {
    std::set<DocId> out;
    for (const auto& d : documents_) out.insert(d.id);
    return out;
  }

  /// Number of classes: the label-name count when names are given, otherwise
  /// one more than the largest label present.
  int num_classes() const {
    if (!label_names_.empty()) return static_cast<int>(label_names_.size());
    LabelId max_label = -1;
    for (const auto& d : documents_) {
      if (d.label) max_label = std::max(max_label, *d.label);
    }
    return static_cast<int>(max_label + 1);
  }

 private:
  std::string name_;
  std::vector<Document> documents_;
  std::vector<std::string> label_names_;
  std::unordered_map<DocId, std::size_t> index_;
};

enum class DatasetFormat { kJsonl, kTsv };

inline DatasetFormat format_from_path(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".tsv" || ext == ".txt") return DatasetFormat::kTsv;
  return DatasetFormat::kJsonl;
}

namespace detail {

inline Dataset parse_jsonl(const std::string& name, std::string_view content) {
  std::vector<Document> docs;
  std::size_t line_no = 0;
  for (std::string_view line : split(content, '\n')) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fail = [&](const std::string& why) {
      return Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + why,
                   static_cast<std::int64_t>(line_no));
    };
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded() || !rec.is_object()) throw fail("not a JSON object");
    if (!rec.contains("id") || !rec["id"].is_number_integer()) throw fail("missing integer \"id\"");
    if (!rec.contains("text") || !rec["text"].is_string()) throw fail("missing string \"text\"");
    if (rec["id"].get<std::int64_t>() < 0) throw fail("negative id");
    Document d;
    d.id = rec["id"].get<DocId>();
    d.text = rec["text"].get<std::string>();
    if (!has_visible_text(d.text)) throw fail("empty text");
    if (rec.contains("label") && !rec["label"].is_null()) {
      if (!rec["label"].is_number_integer() || rec["label"].get<std::int64_t>() < 0) {
        throw fail("\"label\" must be a non-negative integer");
      }
      d.label = rec["label"].get<LabelId>();
    }
    docs.push_back(std::move(d));
  }
  if (docs.empty()) throw Error(ErrorCode::kEmptyDataset, "'" + name + "' contains no records");
  return Dataset(name, std::move(docs));
}

inline Dataset parse_tsv(const std::string& name, std::string_view content) {
  std::vector<Document> docs;
  std::vector<std::string> label_names;
  std::size_t line_no = 0;
  for (std::string_view raw : split(content, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const auto fail = [&](const std::string& why) {
      return Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + why,
                   static_cast<std::int64_t>(line_no));
    };
    if (line.front() == '#') {
      constexpr std::string_view kLabels = "# labels:";
      if (line.starts_with(kLabels)) {
        label_names.clear();
        for (auto name_part : split(line.substr(kLabels.size()), ',')) {
          auto n = trim(name_part);
          if (n.empty()) throw fail("empty label name");
          label_names.emplace_back(n);
        }
      }
      continue;
    }
    auto cols = split(line, '\t');
    if (cols.size() < 2 || cols.size() > 3) throw fail("expected id<TAB>text[<TAB>label]");
    Document d;
    try {
      d.id = parse_int<DocId>(trim(cols[0]));
    } catch (const Error&) {
      throw fail("bad id");
    }
    d.text = std::string(cols[1]);
    if (!has_visible_text(d.text)) throw fail("empty text");
    if (cols.size() == 3 && !trim(cols[2]).empty()) {
      auto label = trim(cols[2]);
      auto named = std::find(label_names.begin(), label_names.end(), label);
      if (named != label_names.end()) {
        d.label = static_cast<LabelId>(named - label_names.begin());
      } else {
        try {
          d.label = parse_int<LabelId>(label);
        } catch (const Error&) {
          throw fail("unknown label '" + std::string(label) + "'");
        }
        if (*d.label < 0 || (!label_names.empty() && static_cast<std::size_t>(*d.label) >= label_names.size())) {
          throw fail("label out of range");
        }
      }
    }
    docs.push_back(std::move(d));
  }
  if (docs.empty()) throw Error(ErrorCode::kEmptyDataset, "'" + name + "' contains no records");
  return Dataset(name, std::move(docs), std::move(label_names));
}

}  // namespace detail

/// Loads a JSONL or TSV dataset. Documents keep file order.
inline Dataset load_dataset(const std::string& path, DatasetFormat format) {
  const std::string content = read_file(path);
  const std::string name = std::filesystem::path(path).stem().string();
  return format == DatasetFormat::kJsonl ? detail::parse_jsonl(name, content)
                                         : detail::parse_tsv(name, content);
}

inline Dataset load_dataset(const std::string& path) { return load_dataset(path, format_from_path(path)); }

inline void save_dataset_jsonl(const Dataset& ds, const std::string& path) {
  std::string out;
  for (const auto& d : ds.documents()) {
    nlohmann::json rec = {{"id", d.id}, {"text", d.text}};
    if (d.label) rec["label"] = *d.label;
    out += rec.dump();
    out += '\n';
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Run state

inline constexpr int kStateVersion = 1;

/// The evolving active-learning state. Only the orchestrator mutates it.
struct RunState {
  std::uint32_t iteration = 0;
  std::set<DocId> labeled_ids;
  std::set<DocId> unlabeled_ids;
  /// Current (reweighted) perplexity of every unlabeled document.
  std::map<DocId, double> perplexity;
  /// Perplexity of each labeled document at the moment it was acquired.
  std::map<DocId, double> labeled_perplexity;
  /// Ids acquired in the most recent iteration, in acquisition order.
  std::vector<DocId> last_batch;
  std::uint64_t rng_seed = 0;
  /// Free-form orchestrator data (metrics history, config echo).
  nlohmann::json metadata = nlohmann::json::object();

  friend bool operator==(const RunState&, const RunState&) = default;

  static RunState fresh(const std::map<DocId, double>& perplexity, std::uint64_t seed) {
    RunState s;
    s.perplexity = perplexity;
    for (const auto& [id, _] : perplexity) s.unlabeled_ids.insert(id);
    s.rng_seed = seed;
    return s;
  }

  /// Checks the internal invariants; throws CorruptState on violation.
  void validate() const {
    for (DocId id : labeled_ids) {
      if (unlabeled_ids.contains(id)) {
        throw Error(ErrorCode::kCorruptState, "id " + std::to_string(id) + " is both labeled and unlabeled",
                    static_cast<std::int64_t>(id));
      }
    }
    for (DocId id : unlabeled_ids) {
      if (!perplexity.contains(id)) {
        throw Error(ErrorCode::kCorruptState, "unlabeled id " + std::to_string(id) + " has no perplexity",
                    static_cast<std::int64_t>(id));
      }
    }
    for (const auto& [id, _] : perplexity) {
      if (!unlabeled_ids.contains(id)) {
        throw Error(ErrorCode::kCorruptState, "perplexity recorded for non-pool id " + std::to_string(id),
                    static_cast<std::int64_t>(id));
      }
    }
    for (DocId id : last_batch) {
      if (!labeled_ids.contains(id)) {
        throw Error(ErrorCode::kCorruptState, "last batch id " + std::to_string(id) + " is not labeled",
                    static_cast<std::int64_t>(id));
      }
    }
  }

  /// Checks the invariants that tie the state to its training split.
  void validate_against(const Dataset& train) const {
    validate();
    if (labeled_ids.size() + unlabeled_ids.size() != train.size()) {
      throw Error(ErrorCode::kCorruptState, "labeled and unlabeled sets do not cover the dataset");
    }
    for (DocId id : labeled_ids) {
      if (!train.contains(id)) throw Error(ErrorCode::kCorruptState, "unknown labeled id " + std::to_string(id));
    }
    for (DocId id : unlabeled_ids) {
      if (!train.contains(id)) throw Error(ErrorCode::kCorruptState, "unknown unlabeled id " + std::to_string(id));
    }
  }
};

namespace detail {

inline nlohmann::json encode_score_map(const std::map<DocId, double>& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, v] : m) arr.push_back(nlohmann::json::array({id, format_double(v)}));
  return arr;
}

inline std::map<DocId, double> decode_score_map(const nlohmann::json& arr) {
  std::map<DocId, double> out;
  for (const auto& entry : arr) {
    if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number_unsigned() || !entry[1].is_string()) {
      throw Error(ErrorCode::kCorruptState, "malformed score entry");
    }
    if (!out.emplace(entry[0].get<DocId>(), parse_double(entry[1].get<std::string>())).second) {
      throw Error(ErrorCode::kCorruptState, "duplicate score entry");
    }
  }
  return out;
}

}  // namespace detail

inline std::string serialize_state(const RunState& s) {
  nlohmann::json j;
  j["state_version"] = kStateVersion;
  j["iteration"] = s.iteration;
  j["rng_seed"] = std::to_string(s.rng_seed);
  j["labeled_ids"] = s.labeled_ids;
  j["unlabeled_ids"] = s.unlabeled_ids;
  j["last_batch"] = s.last_batch;
  j["perplexity"] = detail::encode_score_map(s.perplexity);
  j["labeled_perplexity"] = detail::encode_score_map(s.labeled_perplexity);
  j["metadata"] = s.metadata;
  return j.dump(1) + "\n";
}

inline RunState deserialize_state(std::string_view text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kCorruptState, "state is not a JSON object");
  RunState s;
  try {
    if (j.at("state_version").get<int>() != kStateVersion) {
      throw Error(ErrorCode::kCorruptState, "unsupported state_version");
    }
    s.iteration = j.at("iteration").get<std::uint32_t>();
    s.rng_seed = parse_int<std::uint64_t>(j.at("rng_seed").get<std::string>());
    const auto read_ids = [&](const char* key, std::set<DocId>& dst) {
      for (const auto& v : j.at(key)) {
        if (!dst.insert(v.get<DocId>()).second) {
          throw Error(ErrorCode::kCorruptState, std::string("duplicate id in ") + key);
        }
      }
    };
    read_ids("labeled_ids", s.labeled_ids);
    read_ids("unlabeled_ids", s.unlabeled_ids);
    s.last_batch = j.at("last_batch").get<std::vector<DocId>>();
    s.perplexity = detail::decode_score_map(j.at("perplexity"));
    s.labeled_perplexity = detail::decode_score_map(j.at("labeled_perplexity"));
    if (j.contains("metadata")) s.metadata = j["metadata"];
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptState, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptState) throw;
    throw Error(ErrorCode::kCorruptState, e.what());
  }
  s.validate();
  return s;
}

inline void save_state(const RunState& s, const std::string& path) {
  s.validate();
  const std::string tmp = path + ".tmp";
  write_file(tmp, serialize_state(s));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move checkpoint into place at '" + path + "'");
}

inline RunState load_state(const std::string& path) { return deserialize_state(read_file(path)); }

}  // namespace activeprune
