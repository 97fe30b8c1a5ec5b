#include "ddvqa/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ddvqa::data {

namespace {

using Color = std::array<double, 3>;

// Float canvas; quantized to f32 once at the end.
struct Canvas {
  std::uint32_t size;
  std::vector<double> px;  // size*size*3

  explicit Canvas(std::uint32_t s) : size(s), px(std::size_t{s} * s * 3, 0.0) {}
  double* at(int y, int x) { return &px[(static_cast<std::size_t>(y) * size + x) * 3]; }
  bool inside(int y, int x) const {
    return y >= 0 && x >= 0 && y < static_cast<int>(size) && x < static_cast<int>(size);
  }
  void set(int y, int x, const Color& c) {
    if (!inside(y, x)) return;
    double* p = at(y, x);
    for (int k = 0; k < 3; ++k) p[k] = c[k];
  }
};

struct Box {
  double x0, y0, x1, y1;  // pixel units
};

template <typename Pred>
void fill_where(Canvas& cv, const Box& b, const Color& color, Pred&& inside) {
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y0)));
  const int y1 = std::min<int>(cv.size - 1, static_cast<int>(std::ceil(b.y1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x0)));
  const int x1 = std::min<int>(cv.size - 1, static_cast<int>(std::ceil(b.x1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside(x + 0.5, y + 0.5)) cv.set(y, x, color);
}

void fill_ellipse(Canvas& cv, double cx, double cy, double rx, double ry, const Color& c) {
  fill_where(cv, {cx - rx, cy - ry, cx + rx, cy + ry}, c, [&](double x, double y) {
    const double u = (x - cx) / rx, v = (y - cy) / ry;
    return u * u + v * v <= 1.0;
  });
}

void ring_ellipse(Canvas& cv, double cx, double cy, double rx, double ry, double width,
                  const Color& c) {
  fill_where(cv, {cx - rx - width, cy - ry - width, cx + rx + width, cy + ry + width}, c,
             [&](double x, double y) {
               const double u = (x - cx) / rx, v = (y - cy) / ry;
               const double r = std::sqrt(u * u + v * v);
               return std::abs(r - 1.0) * std::min(rx, ry) <= width * 0.5;
             });
}

// Thick polyline bar: points within `half` of the curve y = base - arch*(1-(2t-1)^2).
void brow_bar(Canvas& cv, double x0, double x1, double base, double arch, double half,
              const Color& c) {
  fill_where(cv, {x0, base - arch - half, x1, base + half}, c, [&](double x, double y) {
    if (x < x0 || x > x1) return false;
    const double t = (x - x0) / (x1 - x0);
    const double cy = base - arch * (1.0 - (2.0 * t - 1.0) * (2.0 * t - 1.0));
    return std::abs(y - cy) <= half;
  });
}

void triangle(Canvas& cv, double ax, double ay, double bx, double by, double cx, double cy,
              const Color& col) {
  const Box box{std::min({ax, bx, cx}), std::min({ay, by, cy}), std::max({ax, bx, cx}),
                std::max({ay, by, cy})};
  auto edge = [](double px, double py, double qx, double qy, double x, double y) {
    return (qx - px) * (y - py) - (qy - py) * (x - px);
  };
  fill_where(cv, box, col, [&](double x, double y) {
    const double e0 = edge(ax, ay, bx, by, x, y);
    const double e1 = edge(bx, by, cx, cy, x, y);
    const double e2 = edge(cx, cy, ax, ay, x, y);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  });
}

void box_blur(Canvas& cv, const Box& b, int radius, int passes) {
  const int y0 = std::max(0, static_cast<int>(b.y0));
  const int y1 = std::min<int>(cv.size - 1, static_cast<int>(b.y1));
  const int x0 = std::max(0, static_cast<int>(b.x0));
  const int x1 = std::min<int>(cv.size - 1, static_cast<int>(b.x1));
  for (int pass = 0; pass < passes; ++pass) {
    const auto src = cv.px;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        Color acc{0, 0, 0};
        int n = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (!cv.inside(yy, xx)) continue;
            const double* p = &src[(static_cast<std::size_t>(yy) * cv.size + xx) * 3];
            for (int k = 0; k < 3; ++k) acc[k] += p[k];
            ++n;
          }
        double* q = cv.at(y, x);
        for (int k = 0; k < 3; ++k) q[k] = acc[k] / n;
      }
  }
}

void tint(Canvas& cv, const Box& b, const Color& factor, const std::vector<std::uint8_t>& mask) {
  for (int y = std::max(0, static_cast<int>(b.y0)); y <= std::min<int>(cv.size - 1, static_cast<int>(b.y1)); ++y)
    for (int x = std::max(0, static_cast<int>(b.x0)); x <= std::min<int>(cv.size - 1, static_cast<int>(b.x1)); ++x) {
      if (!mask[static_cast<std::size_t>(y) * cv.size + x]) continue;
      double* p = cv.at(y, x);
      for (int k = 0; k < 3; ++k) p[k] *= factor[k];
    }
}

Color scaled(const Color& c, double f) { return {c[0] * f, c[1] * f, c[2] * f}; }

std::string trait_of(const SyntheticImage& img, Component c) {
  const auto& traits = real_traits(c);
  for (const auto& [pc, phrase] : img.planted)
    if (pc == c && std::find(traits.begin(), traits.end(), phrase) != traits.end()) return phrase;
  throw std::logic_error("rendered face lacks a trait for a component");
}

bool has(const std::vector<ArtifactType>& v, Component c, std::string_view phrase) {
  return std::any_of(v.begin(), v.end(),
                     [&](const ArtifactType& a) { return a.component == c && a.phrase == phrase; });
}

}  // namespace

const std::vector<ArtifactType>& artifact_catalogue() {
  static const std::vector<ArtifactType> all{
      {Component::kEyebrows, "overlapped"},
      {Component::kEyebrows, "blurry"},
      {Component::kSkin, "inconsistent color"},
      {Component::kSkin, "boundaries"},
      {Component::kEyes, "blurry"},
      {Component::kEyes, "asymmetric"},
      {Component::kNose, "unnaturally curved"},
      {Component::kNose, "blurry"},
      {Component::kMouth, "blurry"},
      {Component::kMouth, "unnatural color"},
  };
  return all;
}

std::vector<ArtifactType> seen_artifacts() {
  return {{Component::kEyebrows, "overlapped"}, {Component::kEyebrows, "blurry"},
          {Component::kSkin, "inconsistent color"}, {Component::kEyes, "blurry"},
          {Component::kNose, "blurry"},             {Component::kMouth, "blurry"}};
}

std::vector<ArtifactType> held_out_artifacts() {
  return {{Component::kSkin, "boundaries"},
          {Component::kEyes, "asymmetric"},
          {Component::kNose, "unnaturally curved"},
          {Component::kMouth, "unnatural color"}};
}

std::string artifact_key(const ArtifactType& a) {
  return std::string(to_string(a.component)) + ":" + a.phrase;
}

ArtifactType parse_artifact_key(std::string_view key) {
  const auto colon = key.find(':');
  if (colon == std::string_view::npos)
    throw std::invalid_argument("artifact key '" + std::string(key) + "' lacks component:phrase");
  ArtifactType a{parse_component(key.substr(0, colon)), std::string(key.substr(colon + 1))};
  const auto& cat = artifact_catalogue();
  if (std::find(cat.begin(), cat.end(), a) == cat.end())
    throw std::invalid_argument("unknown artifact '" + std::string(key) + "'");
  return a;
}

const std::vector<std::string>& real_traits(Component c) {
  static const std::vector<std::string> brows{"arched", "straight"};
  static const std::vector<std::string> skin{"even", "smooth"};
  static const std::vector<std::string> eyes{"round", "oval"};
  static const std::vector<std::string> nose{"straight", "pointed"};
  static const std::vector<std::string> mouth{"full", "thin"};
  static const std::vector<std::string> none;
  switch (c) {
    case Component::kEyebrows: return brows;
    case Component::kSkin: return skin;
    case Component::kEyes: return eyes;
    case Component::kNose: return nose;
    case Component::kMouth: return mouth;
    case Component::kWholeFace: return none;
  }
  return none;
}

const std::string& general_fake_reason() {
  static const std::string s = "obvious manipulated region";
  return s;
}

const std::string& general_real_reason() {
  static const std::string s = "complete face features";
  return s;
}

SyntheticImage render_face(const std::string& image_id, std::uint32_t size,
                           const std::vector<ArtifactType>& artifacts, Rng& rng) {
  if (size < 16) throw std::invalid_argument("render_face: image size must be at least 16");
  const double s = size;
  Canvas cv(size);
  SyntheticImage out;
  out.image_id = image_id;
  out.label = artifacts.empty() ? Verdict::kReal : Verdict::kFake;

  std::array<std::string, 6> trait;
  for (auto c : kFacialComponents) {
    const auto& options = real_traits(c);
    trait[static_cast<std::size_t>(c)] = options[uniform_index(rng, options.size())];
  }

  const double bg = 0.25 + 0.2 * uniform01(rng);
  const Color background{bg, bg * 0.95, bg * 1.05};
  const double tone = 0.8 + 0.25 * uniform01(rng);
  const Color skin = scaled({0.86, 0.68, 0.55}, tone);
  const double jx = (uniform01(rng) - 0.5) * 0.04 * s;
  const double jy = (uniform01(rng) - 0.5) * 0.04 * s;
  const double cx = 0.5 * s + jx;
  const double fy = 0.52 * s + jy;

  for (std::uint32_t y = 0; y < size; ++y)
    for (std::uint32_t x = 0; x < size; ++x) cv.set(static_cast<int>(y), static_cast<int>(x), background);

  // Face; "smooth" skin has a soft vertical shading, "even" is flat.
  const double frx = 0.34 * s, fry = 0.42 * s;
  const bool smooth = trait[static_cast<std::size_t>(Component::kSkin)] == "smooth";
  fill_where(cv, {cx - frx, fy - fry, cx + frx, fy + fry}, skin, [&](double x, double y) {
    const double u = (x - cx) / frx, v = (y - fy) / fry;
    return u * u + v * v <= 1.0;
  });
  std::vector<std::uint8_t> face_mask(std::size_t{size} * size, 0);
  for (std::uint32_t y = 0; y < size; ++y)
    for (std::uint32_t x = 0; x < size; ++x) {
      const double u = (x + 0.5 - cx) / frx, v = (y + 0.5 - fy) / fry;
      if (u * u + v * v > 1.0) continue;
      face_mask[std::size_t{y} * size + x] = 1;
      if (smooth) {
        double* p = cv.at(static_cast<int>(y), static_cast<int>(x));
        const double f = 1.0 + 0.08 * v;
        for (int k = 0; k < 3; ++k) p[k] *= f;
      }
    }
  if (has(artifacts, Component::kSkin, "boundaries"))
    ring_ellipse(cv, cx, fy + 0.04 * s, 0.24 * s, 0.3 * s, std::max(1.0, 0.03 * s), scaled(skin, 0.62));
  if (has(artifacts, Component::kSkin, "inconsistent color")) {
    const bool left = bernoulli(rng, 0.5);
    const double px = cx + (left ? -0.17 : 0.17) * s;
    const Box cheek{px - 0.13 * s, fy - 0.02 * s, px + 0.13 * s, fy + 0.24 * s};
    tint(cv, cheek, {0.72, 0.92, 1.45}, face_mask);
  }

  // Eyebrows.
  const Color brow_col{0.25, 0.15, 0.1};
  const double brow_y = fy - 0.19 * s;
  const double arch = trait[static_cast<std::size_t>(Component::kEyebrows)] == "arched" ? 0.035 * s : 0.0;
  const double half = std::max(0.75, 0.022 * s);
  auto draw_brows = [&](double ox, double oy) {
    brow_bar(cv, cx - 0.22 * s + ox, cx - 0.06 * s + ox, brow_y + oy, arch, half, brow_col);
    brow_bar(cv, cx + 0.06 * s + ox, cx + 0.22 * s + ox, brow_y + oy, arch, half, brow_col);
  };
  draw_brows(0.0, 0.0);
  if (has(artifacts, Component::kEyebrows, "overlapped")) draw_brows(0.03 * s, 0.045 * s);

  // Eyes.
  const bool round = trait[static_cast<std::size_t>(Component::kEyes)] == "round";
  const double erx = round ? 0.055 * s : 0.075 * s;
  const double ery = round ? 0.055 * s : 0.038 * s;
  const double eye_y = fy - 0.1 * s;
  const bool asym = has(artifacts, Component::kEyes, "asymmetric");
  for (int side = -1; side <= 1; side += 2) {
    const double f = (asym && side == 1) ? 1.7 : 1.0;
    const double ex = cx + side * 0.14 * s;
    fill_ellipse(cv, ex, eye_y, erx * f, ery * f, {0.95, 0.95, 0.95});
    fill_ellipse(cv, ex, eye_y, 0.5 * ery * f, 0.5 * ery * f, {0.1, 0.1, 0.2});
  }

  // Nose wedge.
  const bool pointed = trait[static_cast<std::size_t>(Component::kNose)] == "pointed";
  const double nw = pointed ? 0.045 * s : 0.07 * s;
  const double nose_top = fy - 0.05 * s, nose_base = fy + (pointed ? 0.12 : 0.1) * s;
  const double tip_shift = has(artifacts, Component::kNose, "unnaturally curved") ? 0.11 * s : 0.0;
  triangle(cv, cx + tip_shift, nose_top, cx - nw, nose_base, cx + nw, nose_base, scaled(skin, 0.78));

  // Mouth bar.
  const bool full = trait[static_cast<std::size_t>(Component::kMouth)] == "full";
  const double mh = full ? 0.035 * s : 0.015 * s;
  const double mouth_y = fy + 0.22 * s;
  const Color lips = has(artifacts, Component::kMouth, "unnatural color") ? Color{0.3, 0.65, 0.35}
                                                                           : Color{0.75, 0.25, 0.3};
  fill_where(cv, {cx - 0.12 * s, mouth_y - mh, cx + 0.12 * s, mouth_y + mh}, lips,
             [&](double x, double y) {
               return std::abs(x - cx) <= 0.12 * s && std::abs(y - mouth_y) <= std::max(0.6, mh);
             });

  // Sensor noise first, so blur artifacts also remove its texture.
  for (auto& v : cv.px) v += normal(rng, 0.0, 0.02);

  const int radius = std::max(1, static_cast<int>(std::lround(s / 24.0)));
  if (has(artifacts, Component::kEyebrows, "blurry"))
    box_blur(cv, {cx - 0.26 * s, brow_y - 0.08 * s, cx + 0.26 * s, brow_y + 0.06 * s}, radius, 2);
  if (has(artifacts, Component::kEyes, "blurry"))
    box_blur(cv, {cx - 0.24 * s, eye_y - 0.08 * s, cx + 0.24 * s, eye_y + 0.08 * s}, radius, 2);
  if (has(artifacts, Component::kNose, "blurry"))
    box_blur(cv, {cx - 0.12 * s, nose_top - 0.02 * s, cx + 0.12 * s, nose_base + 0.03 * s}, radius, 2);
  if (has(artifacts, Component::kMouth, "blurry"))
    box_blur(cv, {cx - 0.17 * s, mouth_y - 0.07 * s, cx + 0.17 * s, mouth_y + 0.07 * s}, radius, 2);

  out.pixels = Image::blank(size, size, 3);
  for (std::size_t i = 0; i < cv.px.size(); ++i)
    out.pixels.pixels[i] = static_cast<float>(std::clamp(cv.px[i], 0.0, 1.0));

  for (const auto& a : artifacts) out.planted.emplace_back(a.component, a.phrase);
  for (auto c : kFacialComponents) out.planted.emplace_back(c, trait[static_cast<std::size_t>(c)]);
  out.planted.emplace_back(Component::kWholeFace,
                           artifacts.empty() ? general_real_reason() : general_fake_reason());
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.artifacts.empty()) throw std::invalid_argument("synthetic corpus: no artifact types");
  Rng rng(seed);
  SyntheticCorpus corpus;

  std::vector<Component> fakeable;
  for (auto c : kFacialComponents)
    if (std::any_of(config.artifacts.begin(), config.artifacts.end(),
                    [c](const ArtifactType& a) { return a.component == c; }))
      fakeable.push_back(c);

  static constexpr std::array<Manipulation, 4> kFakeKinds{
      Manipulation::kDeepfakes, Manipulation::kFace2Face, Manipulation::kFaceSwap,
      Manipulation::kNeuralTextures};

  for (std::size_t i = 0; i < config.n_images; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s%05zu", config.id_prefix.c_str(), i);
    const bool fake = bernoulli(rng, config.p_fake);

    // Fake images: 3–5 manipulated components (bounded by what the artifact
    // set can touch), each with one or two artifacts. Real images: 4–5
    // annotated components.
    std::vector<ArtifactType> planted;
    std::vector<Component> asked;
    if (fake) {
      const std::size_t k = std::min<std::size_t>(3 + uniform_index(rng, 3), fakeable.size());
      for (auto idx : sample_without_replacement(rng, fakeable.size(), k)) {
        const Component c = fakeable[idx];
        std::vector<ArtifactType> options;
        for (const auto& a : config.artifacts)
          if (a.component == c) options.push_back(a);
        const std::size_t n_art = (options.size() > 1 && bernoulli(rng, 0.25)) ? 2 : 1;
        for (auto j : sample_without_replacement(rng, options.size(), n_art))
          planted.push_back(options[j]);
        asked.push_back(c);
      }
    } else {
      const std::size_t k = 4 + uniform_index(rng, 2);
      for (auto idx : sample_without_replacement(rng, kFacialComponents.size(), k))
        asked.push_back(kFacialComponents[idx]);
    }
    std::sort(asked.begin(), asked.end());
    std::sort(planted.begin(), planted.end(), [](const ArtifactType& a, const ArtifactType& b) {
      return std::tie(a.component, a.phrase) < std::tie(b.component, b.phrase);
    });

    SyntheticImage img = render_face(id, config.image_size, planted, rng);
    img.manipulation = fake ? kFakeKinds[uniform_index(rng, kFakeKinds.size())] : Manipulation::kReal;
    const Verdict label = img.label;

    auto truth_reasons = [&](Component c) {
      std::vector<std::string> rs;
      if (c == Component::kWholeFace) {
        rs.push_back(label == Verdict::kFake ? general_fake_reason() : general_real_reason());
      } else if (label == Verdict::kFake) {
        for (const auto& a : planted)
          if (a.component == c) rs.push_back(a.phrase);
      } else {
        rs.push_back(trait_of(img, c));
      }
      return rs;
    };

    std::vector<Component> questions{Component::kWholeFace};
    questions.insert(questions.end(), asked.begin(), asked.end());
    for (Component c : questions) {
      const auto truth = truth_reasons(c);
      for (int a = 0; a < 3; ++a) {
        RawAnnotation ann;
        ann.image_id = img.image_id;
        ann.component = c;
        ann.annotator_id = "a" + std::to_string(a);
        ann.gt_label = label;
        ann.manipulation = img.manipulation;
        if (bernoulli(rng, config.skip_rate)) {
          corpus.raw.push_back(ann);
          continue;
        }
        const bool correct = bernoulli(rng, config.annotator_accuracy);
        const Verdict v = correct ? label : opposite(label);
        ann.verdict = v;
        ann.fakeness_rating = v == Verdict::kReal ? static_cast<int>(uniform_index(rng, 2))
                                                  : 2 + static_cast<int>(uniform_index(rng, 4));
        if (correct) {
          if (truth.size() > 1) {
            // Each annotator reports a non-empty subset of what is there.
            const std::size_t keep = 1 + uniform_index(rng, truth.size());
            auto idx = sample_without_replacement(rng, truth.size(), keep);
            std::sort(idx.begin(), idx.end());
            for (auto j : idx) ann.reasons.push_back(truth[j]);
          } else {
            ann.reasons = truth;
          }
        } else if (c == Component::kWholeFace) {
          ann.reasons = {v == Verdict::kFake ? general_fake_reason() : general_real_reason()};
        } else if (v == Verdict::kFake) {
          std::vector<std::string> wrong;
          for (const auto& art : artifact_catalogue())
            if (art.component == c) wrong.push_back(art.phrase);
          ann.reasons = {wrong[uniform_index(rng, wrong.size())]};
        } else {
          ann.reasons = {real_traits(c)[uniform_index(rng, real_traits(c).size())]};
        }
        corpus.raw.push_back(ann);
        if (bernoulli(rng, config.conflict_rate)) {
          RawAnnotation twin = ann;
          twin.verdict = opposite(v);
          twin.fakeness_rating = *twin.verdict == Verdict::kReal ? 0 : 3;
          twin.reasons.clear();
          corpus.raw.push_back(twin);
        }
      }
    }
    corpus.images.push_back(std::move(img));
  }

  Rng build_rng = fork(rng);
  auto built = build_dataset(corpus.raw, build_rng, config.test_percent);
  corpus.records = std::move(built.records);
  corpus.drops = std::move(built.drops);
  return corpus;
}

}  // namespace ddvqa::data
