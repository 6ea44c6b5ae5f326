#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <thread>

#include "bpeq/reader_study.hpp"
#include "bpeq/rng.hpp"
#include "cohort.hpp"
#include "study_fixture.hpp"

namespace bpeq {
namespace {

using nlohmann::json;
using testing::TempDir;

std::string rule_of(const ReaderRecord& r) {
  try {
    validate_record(r);
  } catch (const ValidationError& e) {
    return e.rule();
  }
  return "";
}

ReaderRecord record(int middle, int right, std::optional<std::string> pref = {}, bool mbad = false, bool rbad = false) {
  ReaderRecord r;
  r.case_id = "alpha";
  r.reader_id = "r1";
  r.middle = {middle, mbad};
  r.right = {right, rbad};
  r.preference = std::move(pref);
  return r;
}

TEST(RecordRules, EachRuleByName) {
  EXPECT_EQ(rule_of(record(4, 3)), "");
  EXPECT_EQ(rule_of(record(3, 3, "middle")), "");
  EXPECT_EQ(rule_of(record(3, 3, "none")), "");
  EXPECT_EQ(rule_of(record(2, 4, {}, true)), "");
  EXPECT_EQ(rule_of(record(4, 3, "middle")), rules::kPreferenceOnlyWhenEqual);
  EXPECT_EQ(rule_of(record(3, 3)), rules::kPreferenceRequired);
  EXPECT_EQ(rule_of(record(3, 3, "left")), rules::kPreferenceValue);
  EXPECT_EQ(rule_of(record(3, 1, {}, true)), rules::kUnacceptableCap);
  EXPECT_EQ(rule_of(record(1, 5, {}, false, true)), rules::kUnacceptableCap);
  EXPECT_EQ(rule_of(record(0, 3)), rules::kScoreRange);
  EXPECT_EQ(rule_of(record(3, 6)), rules::kScoreRange);
  auto anon = record(4, 3);
  anon.reader_id.clear();
  EXPECT_EQ(rule_of(anon), rules::kReaderRequired);
}

TEST(RecordRules, ExhaustiveScoreGrid) {
  // Oracle: accept iff scores in range, flagged sides <= 2, and a
  // preference exactly when scores tie.
  for (int m = 0; m <= 6; ++m)
    for (int r = 0; r <= 6; ++r)
      for (int flags = 0; flags < 4; ++flags)
        for (const char* p : {static_cast<const char*>(nullptr), "middle", "right", "none"}) {
          const bool mb = flags & 1, rb = flags & 2;
          const auto rec = record(m, r, p ? std::optional<std::string>(p) : std::nullopt, mb, rb);
          const bool ok = m >= 1 && m <= 5 && r >= 1 && r <= 5 && !(mb && m > 2) && !(rb && r > 2) &&
                          ((m == r) == (p != nullptr));
          ASSERT_EQ(rule_of(rec).empty(), ok) << m << " " << r << " " << flags << " " << (p ? p : "-");
        }
}

TEST(RecordJson, MalformedBodies) {
  auto rule = [](const json& j) {
    try {
      ReaderRecord::from_json(j);
    } catch (const ValidationError& e) {
      return e.rule();
    }
    return std::string();
  };
  EXPECT_EQ(rule(json::array()), rules::kMalformed);
  EXPECT_EQ(rule(json{{"case_id", "alpha"}}), rules::kMalformed);
  EXPECT_EQ(rule(testing::score_json("alpha", "r", 3, 4)), "");
  auto j = testing::score_json("alpha", "r", 3, 4);
  j["middle"]["score"] = "3";
  EXPECT_EQ(rule(j), rules::kMalformed);
  j = testing::score_json("alpha", "r", 3, 4);
  j["right"]["unacceptable_slice"] = 1;
  EXPECT_EQ(rule(j), rules::kMalformed);
  const auto r = ReaderRecord::from_json(testing::score_json("alpha", "r", 3, 3, "right"));
  EXPECT_EQ(ReaderRecord::from_json(r.to_json()).to_json(), r.to_json());
}

TEST(Assignment, PureFunctionOfSeedAndCase) {
  const std::vector<std::string> methods{"zeta", "alpha"};
  const auto a = assign_sides(3, "c1", methods);
  const auto b = assign_sides(3, "c1", {"alpha", "zeta"});
  EXPECT_EQ(a.middle_source, b.middle_source);
  EXPECT_NE(a.middle_source, a.right_source);
  // Formula, restated.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : std::string("c1")) h = (h ^ c) * 0x100000001b3ULL;
  const bool flip = splitmix64(3 ^ h) & 1U;
  EXPECT_EQ(a.middle_source, flip ? "zeta" : "alpha");
  // Both orientations occur across cases.
  std::set<std::string> middles;
  for (int i = 0; i < 32; ++i) middles.insert(assign_sides(3, "case" + std::to_string(i), methods).middle_source);
  EXPECT_EQ(middles.size(), 2U);
  EXPECT_THROW(assign_sides(3, "c", {"a", "a"}), InvalidArgument);
  EXPECT_THROW(assign_sides(3, "c", {"a"}), InvalidArgument);
}

TEST(StudyConfigParse, Rejections) {
  TempDir dir;
  const auto path = testing::write_study(dir.path());
  auto j = json::parse(testing::slurp(path));
  EXPECT_NO_THROW(StudyConfig::from_json(j, dir.path()));
  auto no_token = j;
  no_token["token"] = "";
  EXPECT_THROW(StudyConfig::from_json(no_token, dir.path()), InvalidArgument);
  auto three = j;
  three["cases"][0]["segmentations"]["third"] = "x.nii";
  EXPECT_THROW(StudyConfig::from_json(three, dir.path()), InvalidArgument);
  auto dup = j;
  dup["cases"][1]["case_id"] = "alpha";
  EXPECT_THROW(StudyConfig::from_json(dup, dir.path()), InvalidArgument);
  EXPECT_THROW(StudyConfig::load(dir / "missing.json"), Error);
}

class Study : public ::testing::Test {
 protected:
  void SetUp() override { config_path_ = testing::write_study(dir_.path()); }
  ReaderStudy open() const { return ReaderStudy(StudyConfig::load(config_path_)); }

  TempDir dir_;
  std::filesystem::path config_path_;
};

TEST_F(Study, CasesAndSlices) {
  auto study = open();
  const auto cases = study.cases();
  ASSERT_EQ(cases.size(), 2U);
  EXPECT_EQ(cases[0].case_id, "alpha");
  EXPECT_EQ(cases[0].slices, 5);
  EXPECT_EQ(cases[0].width, 16);
  EXPECT_EQ(cases[0].height, 12);
  EXPECT_THROW(study.render_slice("alpha", Layer::kOriginal, 5), NotFound);
  EXPECT_THROW(study.render_slice("alpha", Layer::kOriginal, -1), NotFound);
  EXPECT_THROW(study.render_slice("gamma", Layer::kOriginal, 0), NotFound);
  EXPECT_THROW(parse_layer("left"), NotFound);
}

TEST_F(Study, RenderedContoursFollowAssignment) {
  auto study = open();
  const auto& a = study.assignment("alpha");
  const auto orig = study.render_slice("alpha", Layer::kOriginal, 2);
  const auto mid = study.render_slice("alpha", Layer::kMiddle, 2);
  const auto right = study.render_slice("alpha", Layer::kRight, 2);
  auto red = [](const RgbImage& img, int x, int y) {
    const auto* p = img.at(x, y);
    return p[0] == 255 && p[1] == 0 && p[2] == 0;
  };
  // Box A spans x 2..9, y 2..8; box B x 4..7, y 4..6.
  const RgbImage& img_a = a.middle_source == testing::kMethodA ? mid : right;
  const RgbImage& img_b = a.middle_source == testing::kMethodA ? right : mid;
  EXPECT_TRUE(red(img_a, 2, 5));
  EXPECT_TRUE(red(img_a, 9, 8));
  EXPECT_FALSE(red(img_a, 5, 5));
  EXPECT_FALSE(red(img_a, 1, 5));
  EXPECT_TRUE(red(img_b, 4, 4));
  EXPECT_FALSE(red(img_b, 2, 5));
  // Grey levels are the same off-contour and grey everywhere on the original.
  EXPECT_EQ(std::vector<std::uint8_t>(orig.at(12, 10), orig.at(12, 10) + 3),
            std::vector<std::uint8_t>(mid.at(12, 10), mid.at(12, 10) + 3));
  for (int y = 0; y < orig.height; ++y)
    for (int x = 0; x < orig.width; ++x) {
      const auto* p = orig.at(x, y);
      ASSERT_TRUE(p[0] == p[1] && p[1] == p[2]);
    }
  // Window clamps: darkest column black, brightest white.
  EXPECT_EQ(orig.at(0, 0)[0], 0);
  EXPECT_EQ(orig.at(15, 11)[0], 255);
}

TEST_F(Study, SubmitVersionsAndExport) {
  auto study = open();
  const auto s1 = study.submit(ReaderRecord::from_json(testing::score_json("alpha", "r1", 4, 2)));
  EXPECT_EQ(s1.version, 1);
  EXPECT_EQ(s1.sequence, 1U);
  EXPECT_FALSE(s1.record.timestamp.empty());
  const auto s2 = study.submit(ReaderRecord::from_json(testing::score_json("alpha", "r1", 3, 3, "middle")));
  EXPECT_EQ(s2.version, 2);
  study.submit(ReaderRecord::from_json(testing::score_json("beta", "r1", 2, 5, nullptr, true)));
  study.submit(ReaderRecord::from_json(testing::score_json("alpha", "r0", 1, 2)));
  try {
    study.submit(ReaderRecord::from_json(testing::score_json("gamma", "r1", 4, 2)));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.rule(), rules::kUnknownCase);
  }

  const auto latest = study.latest();
  ASSERT_EQ(latest.size(), 3U);
  EXPECT_EQ(latest[0].record.reader_id, "r0");
  EXPECT_EQ(latest[1].version, 2);

  const std::string csv = study.export_csv();
  std::istringstream in(csv);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, kExportHeader);
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3U);
  // alpha/r1 v2: tie with middle preferred, resolved to the middle method.
  const auto& a = study.assignment("alpha");
  EXPECT_EQ(lines[1], "alpha,r1,2," + s2.record.timestamp + "," + testing::kMethodA + ",3,false," +
                          testing::kMethodB + ",3,false," + a.middle_source + "," + a.middle_source + "," +
                          a.right_source + ",middle");
}

TEST_F(Study, StoreSurvivesRestartAndTornTail) {
  {
    auto study = open();
    study.submit(ReaderRecord::from_json(testing::score_json("alpha", "r1", 4, 2)));
    study.submit(ReaderRecord::from_json(testing::score_json("alpha", "r1", 5, 2)));
  }
  std::ofstream(dir_ / "scores.jsonl", std::ios::app) << R"({"sequence":3,"version":)";
  {
    auto study = open();
    ASSERT_EQ(study.latest().size(), 1U);
    EXPECT_EQ(study.latest()[0].version, 2);
    const auto s = study.submit(ReaderRecord::from_json(testing::score_json("alpha", "r1", 1, 2)));
    EXPECT_EQ(s.version, 3);
    EXPECT_EQ(s.sequence, 3U);
  }
  auto study = open();
  EXPECT_EQ(study.latest()[0].record.middle.score, 1);
  // Every stored line parses.
  std::ifstream in(dir_ / "scores.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_NO_THROW(json::parse(line));
    ++n;
  }
  EXPECT_EQ(n, 3);
}

TEST_F(Study, CorruptMiddleLineIsAnError) {
  std::ofstream(dir_ / "scores.jsonl") << "not json\n"
                                       << R"({"sequence":1,"version":1,"record":{}})" << "\n";
  EXPECT_THROW(open(), FormatError);
}

TEST_F(Study, ConcurrentSubmissionsGetDistinctVersions) {
  auto study = open();
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&study]() {
      for (int i = 0; i < 10; ++i) study.submit(ReaderRecord::from_json(testing::score_json("beta", "rx", 4, 3)));
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(study.latest()[0].version, 40);
  auto reopened = open();
  EXPECT_EQ(reopened.latest()[0].version, 40);
}

TEST_F(Study, MaskLatticeMismatchRejected) {
  write_mask(Mask3D(testing::geometry({16, 12, 4}), std::uint8_t{0}), dir_ / "beta/b.nii");
  auto study = open();
  EXPECT_NO_THROW(study.render_slice("alpha", Layer::kMiddle, 0));
  EXPECT_THROW(study.render_slice("beta", Layer::kMiddle, 0), GeometryError);
}

}  // namespace
}  // namespace bpeq
