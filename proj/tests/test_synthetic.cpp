#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include "ddvqa/synthetic.hpp"
#include "doctest.h"

using namespace ddvqa;
using namespace ddvqa::data;

TEST_CASE("same seed gives bit-identical corpora") {
  SyntheticConfig cfg;
  cfg.n_images = 20;
  cfg.image_size = 32;
  const auto a = generate_synthetic_corpus(cfg, 7);
  const auto b = generate_synthetic_corpus(cfg, 7);
  CHECK(a.records == b.records);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].pixels == b.images[i].pixels);
  const auto c = generate_synthetic_corpus(cfg, 8);
  CHECK_FALSE(c.records == a.records);
}

TEST_CASE("fake fraction within binomial 99% bounds") {
  SyntheticConfig cfg;
  cfg.n_images = 100;
  cfg.image_size = 16;
  const auto corpus = generate_synthetic_corpus(cfg, 11);
  const auto fakes = std::count_if(corpus.images.begin(), corpus.images.end(),
                                   [](const SyntheticImage& i) { return i.label == Verdict::kFake; });
  // Binomial(100, 0.5) quantiles 0.005 and 0.995.
  CHECK(fakes >= 37);
  CHECK(fakes <= 63);
}

TEST_CASE("record reasons are planted on the image") {
  SyntheticConfig cfg;
  cfg.n_images = 60;
  cfg.image_size = 32;
  const auto corpus = generate_synthetic_corpus(cfg, 3);
  std::map<std::string, const SyntheticImage*> by_id;
  for (const auto& img : corpus.images) by_id[img.image_id] = &img;

  const std::regex grammar(R"(The .+ looks? (real|fake)( because .+)?\.)");
  std::size_t fake_records = 0;
  for (const auto& r : corpus.records) {
    const auto& img = *by_id.at(r.image_id);
    CHECK(r.verdict == img.label);
    if (r.verdict == Verdict::kFake) ++fake_records;
    for (const auto& ans : r.answers) {
      CHECK(std::regex_match(ans, grammar));
      const auto parsed = parse_answer(ans);
      REQUIRE(parsed);
      for (const auto& reason : parsed->reasons) {
        if (r.component == Component::kWholeFace) {
          // "<phrase> <component noun>" augmentations or the general reason.
          bool ok = reason == general_fake_reason() || reason == general_real_reason();
          for (const auto& [c, phrase] : img.planted)
            ok = ok || reason == component_reason(c, phrase);
          CHECK_MESSAGE(ok, reason);
        } else {
          const auto hit = std::find(img.planted.begin(), img.planted.end(),
                                     std::pair<Component, std::string>{r.component, reason});
          CHECK_MESSAGE(hit != img.planted.end(), reason);
        }
      }
    }
  }
  CHECK(fake_records > 0);
  CHECK(corpus.records.size() > 3 * corpus.images.size() / 2);
}

TEST_CASE("pixels stay in the unit interval and artifacts change pixels") {
  Rng a(5), b(5);
  const auto clean = render_face("x", 32, {}, a);
  const auto fake = render_face("x", 32, {{Component::kMouth, "unnatural color"}}, b);
  CHECK(clean.label == Verdict::kReal);
  CHECK(fake.label == Verdict::kFake);
  for (float v : clean.pixels.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK_FALSE(clean.pixels == fake.pixels);
  CHECK_THROWS(render_face("x", 8, {}, a));
}

TEST_CASE("seen and held-out artifacts partition the catalogue") {
  auto seen = seen_artifacts();
  auto held = held_out_artifacts();
  CHECK(seen.size() + held.size() == artifact_catalogue().size());
  for (const auto& h : held) CHECK(std::find(seen.begin(), seen.end(), h) == seen.end());
  for (const auto& a : artifact_catalogue()) CHECK(parse_artifact_key(artifact_key(a)) == a);
  CHECK_THROWS(parse_artifact_key("eyes:sparkly"));
}
