#include "bpeq/reader_study.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "bpeq/preprocess.hpp"
#include "bpeq/rng.hpp"
#include "bpeq/volume_io.hpp"
#include "csv.hpp"

namespace bpeq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_all(int fd, const std::string& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("score store write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

SideScore side_from_json(const json& j) {
  if (!j.is_object() || !j.contains("score") || !j.at("score").is_number_integer()) {
    throw ValidationError(rules::kMalformed);
  }
  SideScore s;
  s.score = j.at("score").get<int>();
  if (j.contains("unacceptable_slice")) {
    if (!j.at("unacceptable_slice").is_boolean()) throw ValidationError(rules::kMalformed);
    s.unacceptable_slice = j.at("unacceptable_slice").get<bool>();
  }
  return s;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

StudyConfig StudyConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    StudyConfig c;
    c.seed = j.value("seed", std::uint64_t{0});
    c.token = j.at("token").get<std::string>();
    if (c.token.empty()) {
      throw InvalidArgument("study token must not be empty");
    }
    c.store = base_dir / j.at("store").get<std::string>();
    std::set<std::string> seen;
    for (const auto& jc : j.at("cases")) {
      StudyCase sc;
      sc.case_id = jc.at("case_id").get<std::string>();
      if (!seen.insert(sc.case_id).second) {
        throw InvalidArgument("duplicate case_id " + sc.case_id);
      }
      sc.original = base_dir / jc.at("original").get<std::string>();
      for (const auto& [label, path] : jc.at("segmentations").items()) {
        sc.segmentations[label] = base_dir / path.get<std::string>();
      }
      if (sc.segmentations.size() != 2) {
        throw InvalidArgument("case " + sc.case_id + " needs exactly two segmentations, has " +
                              std::to_string(sc.segmentations.size()));
      }
      c.cases.push_back(std::move(sc));
    }
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("study config: ") + e.what());
  }
}

StudyConfig StudyConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open study config " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("study config is not valid JSON: ") + e.what());
  }
  return from_json(j, path.parent_path());
}

ReaderAssignment assign_sides(std::uint64_t seed, const std::string& case_id,
                              const std::vector<std::string>& methods) {
  if (methods.size() != 2 || methods[0] == methods[1]) {
    throw InvalidArgument("case " + case_id + " needs two distinct segmentation methods");
  }
  const auto& lo = std::min(methods[0], methods[1]);
  const auto& hi = std::max(methods[0], methods[1]);
  const bool flip = (splitmix64(seed ^ fnv1a64(case_id)) & 1U) != 0;
  return {case_id, flip ? hi : lo, flip ? lo : hi};
}

Layer parse_layer(const std::string& name) {
  if (name == "original") return Layer::kOriginal;
  if (name == "middle") return Layer::kMiddle;
  if (name == "right") return Layer::kRight;
  throw NotFound("unknown layer; expected original, middle or right");
}

ReaderRecord ReaderRecord::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError(rules::kMalformed);
  ReaderRecord r;
  try {
    r.case_id = j.at("case_id").get<std::string>();
    r.reader_id = j.value("reader_id", std::string());
    r.middle = side_from_json(j.at("middle"));
    r.right = side_from_json(j.at("right"));
    if (j.contains("preference") && !j.at("preference").is_null()) {
      r.preference = j.at("preference").get<std::string>();
    }
    r.timestamp = j.value("timestamp", std::string());
  } catch (const json::exception&) {
    throw ValidationError(rules::kMalformed);
  }
  return r;
}

json ReaderRecord::to_json() const {
  json j = {{"case_id", case_id},
            {"reader_id", reader_id},
            {"middle", {{"score", middle.score}, {"unacceptable_slice", middle.unacceptable_slice}}},
            {"right", {{"score", right.score}, {"unacceptable_slice", right.unacceptable_slice}}},
            {"preference", preference ? json(*preference) : json(nullptr)},
            {"timestamp", timestamp}};
  return j;
}

void validate_record(const ReaderRecord& r) {
  if (r.reader_id.empty()) throw ValidationError(rules::kReaderRequired);
  for (const SideScore* s : {&r.middle, &r.right}) {
    if (s->score < 1 || s->score > 5) throw ValidationError(rules::kScoreRange);
  }
  for (const SideScore* s : {&r.middle, &r.right}) {
    if (s->unacceptable_slice && s->score > 2) throw ValidationError(rules::kUnacceptableCap);
  }
  if (r.preference && *r.preference != "middle" && *r.preference != "right" && *r.preference != "none") {
    throw ValidationError(rules::kPreferenceValue);
  }
  const bool equal = r.middle.score == r.right.score;
  if (!equal && r.preference) throw ValidationError(rules::kPreferenceOnlyWhenEqual);
  if (equal && !r.preference) throw ValidationError(rules::kPreferenceRequired);
}

ReaderStudy::ReaderStudy(StudyConfig config) : config_(std::move(config)) {
  for (const auto& c : config_.cases) {
    std::vector<std::string> methods;
    for (const auto& [label, path] : c.segmentations) methods.push_back(label);
    assignments_.emplace(c.case_id, assign_sides(config_.seed, c.case_id, methods));
  }
  open_store();
}

ReaderStudy::~ReaderStudy() {
  if (fd_ >= 0) ::close(fd_);
}

void ReaderStudy::open_store() {
  if (config_.store.has_parent_path()) fs::create_directories(config_.store.parent_path());
  std::string content;
  if (fs::exists(config_.store)) {
    std::ifstream in(config_.store, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  // Only newline-terminated lines were acknowledged; a torn tail from an
  // interrupted write is dropped.
  const std::size_t keep = content.rfind('\n') == std::string::npos ? 0 : content.rfind('\n') + 1;
  std::istringstream lines(content.substr(0, keep));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      StoredRecord s{ReaderRecord::from_json(j.at("record")), j.at("version").get<int>(),
                     j.at("sequence").get<std::uint64_t>()};
      versions_[{s.record.case_id, s.record.reader_id}] = s.version;
      records_.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw FormatError("score store " + config_.store.string() + " line " + std::to_string(line_no) +
                        " is corrupt: " + e.what());
    }
  }

  fd_ = ::open(config_.store.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw IoError("cannot open score store " + config_.store.string() + ": " + std::strerror(errno));
  }
  if (keep != content.size() && ::ftruncate(fd_, static_cast<off_t>(keep)) != 0) {
    throw IoError("cannot truncate torn score store tail: " + std::string(std::strerror(errno)));
  }
}

const StudyCase& ReaderStudy::find_case(const std::string& case_id) const {
  for (const auto& c : config_.cases) {
    if (c.case_id == case_id) return c;
  }
  throw NotFound("unknown case");
}

const ReaderAssignment& ReaderStudy::assignment(const std::string& case_id) const {
  const auto it = assignments_.find(case_id);
  if (it == assignments_.end()) throw NotFound("unknown case");
  return it->second;
}

const ReaderStudy::CaseData& ReaderStudy::load(const std::string& case_id) const {
  const StudyCase& sc = find_case(case_id);
  {
    std::lock_guard lock(cache_mu_);
    if (auto it = cache_.find(case_id); it != cache_.end()) return *it->second;
  }
  // Loaded outside the lock; a racing loader produces an identical entry.
  Volume3D original = read_volume(sc.original);
  const float lo = nearest_rank_percentile(original.voxels(), 2.0);
  const float hi = nearest_rank_percentile(original.voxels(), 98.0);
  auto data = std::make_shared<CaseData>(CaseData{std::move(original), lo, hi, {}});
  for (const auto& [label, path] : sc.segmentations) {
    Mask3D mask = read_mask(path);
    require_same_lattice(data->original.geometry(), mask.geometry(), "reader study mask");
    data->masks.emplace(label, std::move(mask));
  }
  std::lock_guard lock(cache_mu_);
  auto [it, inserted] = cache_.emplace(case_id, std::move(data));
  return *it->second;
}

std::vector<CaseSummary> ReaderStudy::cases() const {
  std::vector<CaseSummary> out;
  for (const auto& c : config_.cases) {
    const auto& d = load(c.case_id).original.dims();
    out.push_back({c.case_id, d[2], d[0], d[1]});
  }
  return out;
}

RgbImage ReaderStudy::render_slice(const std::string& case_id, Layer layer, std::int64_t z) const {
  const CaseData& data = load(case_id);
  const Volume3D& vol = data.original;
  const auto [nx, ny, nz] = vol.dims();
  if (z < 0 || z >= nz) throw NotFound("slice out of range");

  RgbImage img{static_cast<int>(nx), static_cast<int>(ny), std::vector<std::uint8_t>(3 * nx * ny)};
  const double lo = data.window_lo;
  const double hi = data.window_hi;
  for (std::int64_t y = 0; y < ny; ++y) {
    for (std::int64_t x = 0; x < nx; ++x) {
      const double v = vol.at(x, y, z);
      double g = 0.0;
      if (hi > lo) {
        g = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
      } else {
        g = v > lo ? 1.0 : 0.0;
      }
      const auto grey = static_cast<std::uint8_t>(std::lround(255.0 * g));
      std::uint8_t* px = img.at(static_cast<int>(x), static_cast<int>(y));
      px[0] = px[1] = px[2] = grey;
    }
  }
  if (layer == Layer::kOriginal) return img;

  const ReaderAssignment& a = assignment(case_id);
  const Mask3D& mask = data.masks.at(layer == Layer::kMiddle ? a.middle_source : a.right_source);
  auto inside = [&](std::int64_t x, std::int64_t y) {
    return x >= 0 && y >= 0 && x < nx && y < ny && mask.at(x, y, z) != 0;
  };
  for (std::int64_t y = 0; y < ny; ++y) {
    for (std::int64_t x = 0; x < nx; ++x) {
      if (inside(x, y) && (!inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1))) {
        std::uint8_t* px = img.at(static_cast<int>(x), static_cast<int>(y));
        px[0] = 255;
        px[1] = 0;
        px[2] = 0;
      }
    }
  }
  return img;
}

StoredRecord ReaderStudy::submit(ReaderRecord record) {
  if (assignments_.find(record.case_id) == assignments_.end()) {
    throw ValidationError(rules::kUnknownCase);
  }
  validate_record(record);
  if (record.timestamp.empty()) record.timestamp = utc_now();

  std::lock_guard lock(store_mu_);
  const int version = versions_[{record.case_id, record.reader_id}] + 1;
  StoredRecord stored{std::move(record), version, records_.size() + 1};
  const json line = {{"sequence", stored.sequence}, {"version", stored.version}, {"record", stored.record.to_json()}};
  write_all(fd_, line.dump() + "\n");
  if (::fsync(fd_) != 0) {
    throw IoError(std::string("score store fsync failed: ") + std::strerror(errno));
  }
  versions_[{stored.record.case_id, stored.record.reader_id}] = stored.version;
  records_.push_back(stored);
  return stored;
}

std::vector<StoredRecord> ReaderStudy::latest() const {
  std::lock_guard lock(store_mu_);
  std::map<std::pair<std::string, std::string>, const StoredRecord*> last;
  for (const auto& r : records_) {
    auto& slot = last[{r.record.case_id, r.record.reader_id}];
    if (slot == nullptr || r.version > slot->version) slot = &r;
  }
  std::vector<StoredRecord> out;
  for (const auto& [key, r] : last) out.push_back(*r);
  return out;
}

std::string ReaderStudy::export_csv() const {
  std::string out = std::string(kExportHeader) + "\n";
  for (const auto& s : latest()) {
    const ReaderRecord& r = s.record;
    const ReaderAssignment& a = assignment(r.case_id);
    const bool a_in_middle = a.middle_source < a.right_source;
    const std::string& method_a = a_in_middle ? a.middle_source : a.right_source;
    const std::string& method_b = a_in_middle ? a.right_source : a.middle_source;
    const SideScore& side_a = a_in_middle ? r.middle : r.right;
    const SideScore& side_b = a_in_middle ? r.right : r.middle;
    std::string preferred;
    if (r.preference) {
      preferred = *r.preference == "middle"  ? a.middle_source
                  : *r.preference == "right" ? a.right_source
                                             : "none";
    }
    out += csv::join({r.case_id, r.reader_id, std::to_string(s.version), r.timestamp, method_a,
                      std::to_string(side_a.score), bool_text(side_a.unacceptable_slice), method_b,
                      std::to_string(side_b.score), bool_text(side_b.unacceptable_slice), preferred, a.middle_source,
                      a.right_source, r.preference.value_or("")});
    out += "\n";
  }
  return out;
}

}  // namespace bpeq
