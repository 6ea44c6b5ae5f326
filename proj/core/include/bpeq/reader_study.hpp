#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bpeq/png.hpp"
#include "bpeq/volume.hpp"

namespace bpeq {

// Unknown case, slice or layer. The server maps this to 404.
class NotFound : public Error {
 public:
  using Error::Error;
};

struct StudyCase {
  std::string case_id;
  std::filesystem::path original;
  // Exactly two entries: method label -> mask path.
  std::map<std::string, std::filesystem::path> segmentations;
};

// {"seed": 7, "token": "...", "store": "scores.jsonl",
//  "cases": [{"case_id": "c1", "original": "c1/s0.nii",
//             "segmentations": {"dl": "...", "fcm": "..."}}]}
// Relative paths resolve against the config file's directory.
struct StudyConfig {
  std::vector<StudyCase> cases;
  std::uint64_t seed = 0;
  std::string token;
  std::filesystem::path store;

  static StudyConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static StudyConfig load(const std::filesystem::path& path);
};

// Which method is drawn in which panel. The left panel always shows the
// original image.
struct ReaderAssignment {
  std::string case_id;
  std::string middle_source;
  std::string right_source;
};

// Pure function of (seed, case_id): the lower-sorting label goes to the
// middle panel when bit 0 of splitmix64(seed ^ fnv1a64(case_id)) is 0.
// Throws InvalidArgument unless exactly two distinct labels are given.
ReaderAssignment assign_sides(std::uint64_t seed, const std::string& case_id,
                              const std::vector<std::string>& methods);

enum class Layer { kOriginal, kMiddle, kRight };
Layer parse_layer(const std::string& name);  // throws NotFound

struct SideScore {
  int score = 0;  // 1..5
  bool unacceptable_slice = false;
};

// Submission as the client sees it: sides, never methods.
struct ReaderRecord {
  std::string case_id;
  std::string reader_id;
  SideScore middle;
  SideScore right;
  // "middle", "right" or "none"; present iff the scores are equal.
  std::optional<std::string> preference;
  std::string timestamp;  // assigned by the server when empty

  static ReaderRecord from_json(const nlohmann::json& j);  // throws ValidationError
  nlohmann::json to_json() const;
};

// Rule names reported back to clients.
namespace rules {
inline constexpr const char* kUnknownCase = "unknown case";
inline constexpr const char* kReaderRequired = "reader_id required";
inline constexpr const char* kScoreRange = "score out of range";
inline constexpr const char* kUnacceptableCap = "unacceptable slice caps score at 2";
inline constexpr const char* kPreferenceOnlyWhenEqual = "preference only when scores equal";
inline constexpr const char* kPreferenceRequired = "preference required when scores equal";
inline constexpr const char* kPreferenceValue = "preference must be middle, right or none";
inline constexpr const char* kMalformed = "malformed record";
}  // namespace rules

// Checks the record invariants (not case existence); throws ValidationError.
void validate_record(const ReaderRecord& record);

struct StoredRecord {
  ReaderRecord record;
  int version = 0;  // 1 for the first submission of (reader_id, case_id)
  std::uint64_t sequence = 0;  // position in the store, from 1
};

struct CaseSummary {
  std::string case_id;
  std::int64_t slices = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
};

// Study state: case volumes (loaded lazily and cached), side assignments,
// and the append-only JSONL score store. Thread-safe.
class ReaderStudy {
 public:
  explicit ReaderStudy(StudyConfig config);
  ~ReaderStudy();
  ReaderStudy(const ReaderStudy&) = delete;
  ReaderStudy& operator=(const ReaderStudy&) = delete;

  const StudyConfig& config() const { return config_; }
  std::vector<CaseSummary> cases() const;
  const ReaderAssignment& assignment(const std::string& case_id) const;

  // Axial slice z as RGB: grey from the original windowed to its 2nd-98th
  // percentiles; for middle/right the mask contour (mask voxels with a
  // 4-neighbour outside the mask or the image) is drawn in pure red.
  RgbImage render_slice(const std::string& case_id, Layer layer, std::int64_t z) const;

  // Validates, appends to the store (fsync before returning) and returns
  // the stored version.
  StoredRecord submit(ReaderRecord record);

  // Latest version per (case_id, reader_id), sorted by case_id then reader_id.
  std::vector<StoredRecord> latest() const;

  // Unblinded CSV (see kExportHeader), latest versions only.
  std::string export_csv() const;

 private:
  struct CaseData {
    Volume3D original;
    float window_lo = 0.0F;
    float window_hi = 0.0F;
    std::map<std::string, Mask3D> masks;
  };
  const CaseData& load(const std::string& case_id) const;
  const StudyCase& find_case(const std::string& case_id) const;
  void open_store();

  StudyConfig config_;
  std::map<std::string, ReaderAssignment> assignments_;

  mutable std::mutex cache_mu_;
  mutable std::map<std::string, std::shared_ptr<const CaseData>> cache_;

  mutable std::mutex store_mu_;
  int fd_ = -1;
  std::vector<StoredRecord> records_;
  std::map<std::pair<std::string, std::string>, int> versions_;
};

inline constexpr const char* kExportHeader =
    "case_id,reader_id,version,timestamp,method_a,score_a,unacceptable_a,method_b,score_b,unacceptable_b,"
    "preferred,middle_method,right_method,preference";

}  // namespace bpeq
