#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "ddvqa/dataset.hpp"
#include "doctest.h"

using namespace ddvqa;
using namespace ddvqa::data;

namespace {

RawAnnotation anno(std::string image, Component c, std::string who, std::optional<Verdict> v,
                   std::vector<std::string> reasons, Verdict gt) {
  RawAnnotation a;
  a.image_id = std::move(image);
  a.component = c;
  a.annotator_id = std::move(who);
  a.verdict = v;
  a.fakeness_rating = v == Verdict::kFake ? 3 : 0;
  a.reasons = std::move(reasons);
  a.gt_label = gt;
  a.manipulation = gt == Verdict::kFake ? Manipulation::kDeepfakes : Manipulation::kReal;
  return a;
}

const std::regex kGrammar(R"(The .+ looks? (real|fake)( because .+)?\.)");

}  // namespace

TEST_CASE("majority vote over every three-annotator combination") {
  // 0 = real, 1 = fake, 2 = skipped
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        std::vector<RawAnnotation> annos;
        int fake = 0, real = 0;
        for (int v : {a, b, c}) {
          std::optional<Verdict> verdict;
          if (v == 0) verdict = Verdict::kReal, ++real;
          if (v == 1) verdict = Verdict::kFake, ++fake;
          annos.push_back(anno("x", Component::kEyes, "a" + std::to_string(annos.size()), verdict,
                               {"r" + std::to_string(annos.size())}, Verdict::kFake));
        }
        const auto m = aggregate_majority(annos);
        std::optional<Verdict> expected;
        if (fake >= 2) expected = Verdict::kFake;
        if (real >= 2) expected = Verdict::kReal;
        CHECK(m.verdict == expected);
        if (expected) CHECK(m.reasons.size() == static_cast<std::size_t>(std::max(fake, real)));
        else CHECK(m.reasons.empty());
      }
}

TEST_CASE("majority keeps the agreeing annotators' explanations") {
  std::vector<RawAnnotation> annos{
      anno("x", Component::kEyebrows, "a", Verdict::kFake, {"overlapped"}, Verdict::kFake),
      anno("x", Component::kEyebrows, "b", Verdict::kFake, {"blurry"}, Verdict::kFake),
      anno("x", Component::kEyebrows, "c", Verdict::kReal, {"arched"}, Verdict::kFake)};
  const auto m = aggregate_majority(annos);
  REQUIRE(m.verdict == Verdict::kFake);
  CHECK(m.reasons == std::vector<std::vector<std::string>>{{"overlapped"}, {"blurry"}});
  CHECK_THROWS(aggregate_majority(std::span<const RawAnnotation>{}));
}

TEST_CASE("quality filters") {
  AggregatedRecord rec;
  rec.gt_label = Verdict::kFake;
  rec.majority.verdict = Verdict::kFake;
  rec.majority.reasons = {{"blurry"}, {"blurry"}};
  CHECK(quality_filter(rec).keep);

  auto unanswered = rec;
  unanswered.image_has_answers = false;
  CHECK(quality_filter(unanswered).reason == DropReason::kNoAnswers);

  auto conflicting = rec;
  conflicting.conflicting = true;
  CHECK(quality_filter(conflicting).reason == DropReason::kConflicting);

  auto mismatch = rec;
  mismatch.majority.verdict = Verdict::kReal;
  CHECK(quality_filter(mismatch).reason == DropReason::kGtMismatch);

  CHECK(to_string(DropReason::kGtMismatch) == "gt_mismatch");
}

TEST_CASE("pipeline applies each filter to a violating record") {
  Rng rng(1);
  std::vector<RawAnnotation> raw;
  // compliant: img_ok eyes fake/fake/fake
  for (const char* w : {"a", "b", "c"})
    raw.push_back(anno("img_ok", Component::kEyes, w, Verdict::kFake, {"blurry"}, Verdict::kFake));
  // (a) nothing answered
  for (const char* w : {"a", "b", "c"})
    raw.push_back(anno("img_blank", Component::kNose, w, std::nullopt, {}, Verdict::kFake));
  // (b) annotator b picks both real and fake
  raw.push_back(anno("img_conf", Component::kEyebrows, "a", Verdict::kFake, {"overlapped"}, Verdict::kFake));
  raw.push_back(anno("img_conf", Component::kEyebrows, "b", Verdict::kFake, {"overlapped"}, Verdict::kFake));
  raw.push_back(anno("img_conf", Component::kEyebrows, "b", Verdict::kReal, {}, Verdict::kFake));
  // (c) majority real on a fake image
  for (const char* w : {"a", "b", "c"})
    raw.push_back(anno("img_gt", Component::kSkin, w, Verdict::kReal, {"smooth"}, Verdict::kFake));

  const auto out = build_dataset(raw, rng, 0);
  REQUIRE(out.records.size() == 1);
  CHECK(out.records[0].image_id == "img_ok");
  std::map<std::string, DropReason> drops;
  for (const auto& d : out.drops) drops[d.image_id] = d.reason;
  CHECK(drops.at("img_blank") == DropReason::kNoAnswers);
  CHECK(drops.at("img_conf") == DropReason::kConflicting);
  CHECK(drops.at("img_gt") == DropReason::kGtMismatch);
}

TEST_CASE("render_answer") {
  std::vector<std::string> overlapped{"overlapped"};
  CHECK(render_answer(Component::kEyebrows, Verdict::kFake, overlapped) ==
        "The eyebrows look fake because eyebrows look overlapped.");
  std::vector<std::string> smooth{"smooth"};
  CHECK(render_answer(Component::kSkin, Verdict::kReal, smooth) ==
        "The skin looks real because skin looks smooth.");
  std::vector<std::string> two{"blurry", "inconsistent color"};
  CHECK(render_answer(Component::kSkin, Verdict::kFake, two) ==
        "The skin looks fake because skin looks blurry, inconsistent color.");
  CHECK(render_answer(Component::kWholeFace, Verdict::kReal, {}) == "The image looks real.");
  CHECK_THROWS(render_answer(Component::kMouth, Verdict::kFake, {}));
}

TEST_CASE("parse_answer inverts render_answer") {
  std::vector<std::string> two{"blurry", "inconsistent color"};
  const auto text = render_answer(Component::kSkin, Verdict::kFake, two);
  const auto parsed = parse_answer(text);
  REQUIRE(parsed);
  CHECK(parsed->noun == "skin");
  CHECK(parsed->verdict == Verdict::kFake);
  CHECK(parsed->reasons == two);
  CHECK_FALSE(parse_answer("The person has eyebrows."));
}

TEST_CASE("make_questions") {
  std::vector<Component> brows{Component::kEyebrows};
  auto q = make_questions("x", brows);
  REQUIRE(q.size() == 2);
  CHECK(q[0].first == "Does the person in the image look fake?");
  CHECK(q[1].first == "Do the person's eyebrows look real/fake?");
  std::vector<Component> all(kFacialComponents.begin(), kFacialComponents.end());
  CHECK(make_questions("x", all).size() == 6);
  CHECK(make_questions("x", std::span<const Component>{}).size() == 1);
  for (const auto& [text, c] : make_questions("x", all)) CHECK(is_canonical_question(text));
}

TEST_CASE("augment_general_answer") {
  Rng rng(3);
  std::vector<std::string> general{"obvious manipulated region"};
  std::vector<std::string> fine{"overlapped eyebrows", "blurry mouth"};
  const auto both = augment_general_reasons(general, fine, rng);
  REQUIRE(both.size() == 3);
  CHECK(both[0] == general[0]);
  CHECK(std::is_permutation(both.begin() + 1, both.end(), fine.begin()));
  CHECK(augment_general_answer(Verdict::kFake, general, {}, rng) ==
        "The image looks fake because image looks obvious manipulated region.");

  SUBCASE("two of three, reproducible by seed") {
    std::vector<std::string> three{"a", "b", "c"};
    Rng r1(42);
    const auto got = augment_general_reasons(general, three, r1);
    // Partial Fisher-Yates spelled out over raw engine draws.
    Rng r2(42);
    std::vector<int> idx{0, 1, 2};
    std::swap(idx[0], idx[0 + r2() % 3]);
    std::swap(idx[1], idx[1 + r2() % 2]);
    CHECK(got == std::vector<std::string>{general[0], three[idx[0]], three[idx[1]]});
    Rng r3(42);
    CHECK(augment_general_reasons(general, three, r3) == got);
  }
}

TEST_CASE("built answers follow the grammar and the image label") {
  Rng rng(5);
  std::vector<RawAnnotation> raw;
  for (int i = 0; i < 30; ++i) {
    const Verdict gt = i % 2 ? Verdict::kFake : Verdict::kReal;
    const std::string id = "im" + std::to_string(i);
    for (const char* w : {"a", "b", "c"}) {
      raw.push_back(anno(id, Component::kWholeFace, w, gt,
                         {gt == Verdict::kFake ? "obvious manipulated region" : "complete face features"}, gt));
      raw.push_back(anno(id, Component::kMouth, w, (i % 5 == 0) ? opposite(gt) : gt,
                         {gt == Verdict::kFake ? "blurry" : "full"}, gt));
    }
  }
  const auto out = build_dataset(raw, rng, 10);
  CHECK_FALSE(out.records.empty());
  for (const auto& r : out.records) {
    CHECK(r.verdict == (std::stoi(r.image_id.substr(2)) % 2 ? Verdict::kFake : Verdict::kReal));
    for (const auto& a : r.answers) {
      CHECK(std::regex_match(a, kGrammar));
      CHECK(parse_answer(a)->verdict == r.verdict);
    }
    CHECK(is_canonical_question(r.question));
  }
  CHECK(std::is_sorted(out.records.begin(), out.records.end(), [](const QARecord& a, const QARecord& b) {
    return std::tie(a.image_id, a.component) < std::tie(b.image_id, b.component);
  }));
}

TEST_CASE("split is per image") {
  std::set<Split> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(split_for_image("img" + std::to_string(i)));
  CHECK(seen.size() == 2);
  int test = 0;
  for (int i = 0; i < 2000; ++i) test += split_for_image("img" + std::to_string(i)) == Split::kTest;
  CHECK(test > 120);
  CHECK(test < 280);
}

TEST_CASE("JSON-lines round trip") {
  QARecord r;
  r.image_id = "img00001";
  r.component = Component::kNose;
  r.question = fine_grained_question(Component::kNose);
  r.answers = {"The nose looks fake because nose looks blurry."};
  r.verdict = Verdict::kFake;
  r.split = Split::kTest;
  r.manipulation = Manipulation::kFaceSwap;
  CHECK(record_from_json_line(record_to_json_line(r)) == r);
  CHECK_THROWS(record_from_json_line(R"({"image_id":"x"})"));

  const auto path = std::filesystem::temp_directory_path() / "ddvqa_ds_test.jsonl";
  std::vector<QARecord> recs{r, r};
  write_dataset(path, recs);
  CHECK(read_dataset(path) == recs);
  std::filesystem::remove(path);
}

TEST_CASE("malformed raw annotation reports the line") {
  const auto path = std::filesystem::temp_directory_path() / "ddvqa_raw_bad.jsonl";
  {
    std::ofstream out(path);
    out << R"({"image_id":"a","component":"eyes","annotator_id":"x","verdict":"fake","fakeness_rating":3,"reasons":["blurry"],"gt_label":"fake","manipulation":"Deepfakes"})" << "\n";
    out << R"({"image_id":"a","component":"eyes","annotator_id":"y","verdict":"fake","fakeness_rating":0,"reasons":[],"gt_label":"fake","manipulation":"Deepfakes"})" << "\n";
  }
  try {
    read_raw_annotations(path);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corpus statistics sum to the pair count") {
  std::vector<QARecord> recs(5);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].image_id = "i" + std::to_string(i / 2);
    recs[i].component = kAllComponents[i % 6];
    recs[i].manipulation = kAllManipulations[i % 5];
  }
  const auto s = corpus_stats(recs);
  CHECK(s.total_pairs == 5);
  CHECK(s.images == 3);
  std::size_t by_m = 0, by_c = 0;
  for (const auto& [k, v] : s.by_manipulation) by_m += v;
  for (const auto& [k, v] : s.by_component) by_c += v;
  CHECK(by_m == 5);
  CHECK(by_c == 5);
}
