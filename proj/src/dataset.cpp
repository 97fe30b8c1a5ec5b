#include "ddvqa/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace ddvqa::data {

using nlohmann::json;

// ---- enum names -------------------------------------------------------------

std::string_view to_string(Component c) {
  switch (c) {
    case Component::kWholeFace: return "whole_face";
    case Component::kEyebrows: return "eyebrows";
    case Component::kSkin: return "skin";
    case Component::kEyes: return "eyes";
    case Component::kNose: return "nose";
    case Component::kMouth: return "mouth";
  }
  return "?";
}

std::string_view to_string(Verdict v) { return v == Verdict::kReal ? "real" : "fake"; }
std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::string_view to_string(Manipulation m) {
  switch (m) {
    case Manipulation::kReal: return "real";
    case Manipulation::kDeepfakes: return "Deepfakes";
    case Manipulation::kFace2Face: return "Face2Face";
    case Manipulation::kFaceSwap: return "FaceSwap";
    case Manipulation::kNeuralTextures: return "NeuralTextures";
  }
  return "?";
}

std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::kNoAnswers: return "no_answers";
    case DropReason::kConflicting: return "conflicting_annotation";
    case DropReason::kGtMismatch: return "gt_mismatch";
    case DropReason::kNoMajority: return "no_majority";
    case DropReason::kMissingReasons: return "missing_reasons";
  }
  return "?";
}

Component parse_component(std::string_view s) {
  for (auto c : kAllComponents)
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown component '" + std::string(s) + "'");
}

Verdict parse_verdict(std::string_view s) {
  if (s == "real") return Verdict::kReal;
  if (s == "fake") return Verdict::kFake;
  throw std::invalid_argument("unknown verdict '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

Manipulation parse_manipulation(std::string_view s) {
  for (auto m : kAllManipulations)
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown manipulation '" + std::string(s) + "'");
}

std::string_view component_noun(Component c) {
  return c == Component::kWholeFace ? "image" : to_string(c);
}

namespace {

bool plural_noun(Component c) { return c == Component::kEyebrows || c == Component::kEyes; }
std::string_view look_verb(Component c) { return plural_noun(c) ? "look" : "looks"; }

}  // namespace

// ---- aggregation and filtering ---------------------------------------------

MajorityResult aggregate_majority(std::span<const RawAnnotation> annos) {
  if (annos.empty()) throw std::invalid_argument("aggregate_majority: no annotations");
  std::size_t n_fake = 0, n_real = 0;
  for (const auto& a : annos) {
    if (!a.verdict) continue;
    (*a.verdict == Verdict::kFake ? n_fake : n_real) += 1;
  }
  MajorityResult out;
  if (n_fake >= 2 && n_fake > n_real)
    out.verdict = Verdict::kFake;
  else if (n_real >= 2 && n_real > n_fake)
    out.verdict = Verdict::kReal;
  if (!out.verdict) return out;
  for (const auto& a : annos) {
    if (a.verdict != out.verdict) continue;
    out.reasons.push_back(a.reasons);
    out.ratings.push_back(a.fakeness_rating);
  }
  return out;
}

FilterDecision quality_filter(const AggregatedRecord& record) {
  if (!record.image_has_answers) return {false, DropReason::kNoAnswers};
  if (record.conflicting) return {false, DropReason::kConflicting};
  if (!record.majority.verdict) return {false, DropReason::kNoMajority};
  if (*record.majority.verdict != record.gt_label) return {false, DropReason::kGtMismatch};
  return {true, std::nullopt};
}

// ---- templates --------------------------------------------------------------

Strength strength_from_rating(int rating) {
  if (rating >= 4) return Strength::kVery;
  if (rating >= 2) return Strength::kABit;
  return Strength::kNone;
}

std::string render_answer(Component component, Verdict verdict,
                          std::span<const std::string> reasons, Strength strength) {
  if (verdict == Verdict::kFake && reasons.empty())
    throw std::invalid_argument("render_answer: a fake verdict needs at least one reason");
  const std::string noun(component_noun(component));
  const std::string verb(look_verb(component));
  std::string out = "The " + noun + " " + verb + " ";
  if (verdict == Verdict::kFake && strength == Strength::kABit) out += "a bit ";
  if (verdict == Verdict::kFake && strength == Strength::kVery) out += "very ";
  out += to_string(verdict);
  if (!reasons.empty()) {
    out += " because " + noun + " " + verb + " ";
    for (std::size_t i = 0; i < reasons.size(); ++i) {
      if (i) out += ", ";
      out += reasons[i];
    }
  }
  out += ".";
  return out;
}

std::optional<ParsedAnswer> parse_answer(std::string_view answer) {
  static const std::regex re(
      R"(^The (.+?) (looks|look)(?: (?:a bit|very))? (real|fake)(?: because (.+))?\.$)");
  std::cmatch m;
  if (!std::regex_match(answer.data(), answer.data() + answer.size(), m, re)) return std::nullopt;
  ParsedAnswer out;
  out.noun = m[1].str();
  out.verdict = parse_verdict(m[3].str());
  if (m[4].matched) {
    const std::string tail = m[4].str();
    const std::string prefix = out.noun + " " + m[2].str() + " ";
    if (tail.rfind(prefix, 0) != 0) return std::nullopt;
    std::string rest = tail.substr(prefix.size());
    std::size_t pos = 0;
    while (true) {
      const auto comma = rest.find(", ", pos);
      out.reasons.push_back(rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 2;
    }
  }
  return out;
}

bool matches_answer_grammar(std::string_view answer) {
  static const std::regex re(R"(The .+ looks? (real|fake)( because .+)?\.)");
  return std::regex_match(answer.begin(), answer.end(), re);
}

std::string canonical_reason(std::string_view reason) {
  std::size_t b = 0, e = reason.size();
  while (b < e && std::isspace(static_cast<unsigned char>(reason[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(reason[e - 1]))) --e;
  std::string out(reason.substr(b, e - b));
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string general_question() { return "Does the person in the image look fake?"; }

std::string fine_grained_question(Component c) {
  if (c == Component::kWholeFace) return general_question();
  return "Do the person's " + std::string(component_noun(c)) + " look real/fake?";
}

bool is_canonical_question(std::string_view question) {
  for (auto c : kAllComponents)
    if (question == fine_grained_question(c)) return true;
  return false;
}

std::vector<std::pair<std::string, Component>> make_questions(
    std::string_view /*image_id*/, std::span<const Component> components_present) {
  std::vector<std::pair<std::string, Component>> out;
  out.emplace_back(general_question(), Component::kWholeFace);
  for (auto c : kFacialComponents)
    if (std::find(components_present.begin(), components_present.end(), c) !=
        components_present.end())
      out.emplace_back(fine_grained_question(c), c);
  return out;
}

std::string component_reason(Component c, std::string_view reason) {
  return std::string(reason) + " " + std::string(component_noun(c));
}

std::vector<std::string> augment_general_reasons(std::span<const std::string> general_reasons,
                                                 std::span<const std::string> fine_reasons,
                                                 Rng& rng) {
  std::vector<std::string> out(general_reasons.begin(), general_reasons.end());
  if (fine_reasons.empty()) return out;
  for (auto i : sample_without_replacement(rng, fine_reasons.size(), 2)) {
    if (std::find(out.begin(), out.end(), fine_reasons[i]) == out.end())
      out.push_back(fine_reasons[i]);
  }
  return out;
}

std::string augment_general_answer(Verdict verdict, std::span<const std::string> general_reasons,
                                   std::span<const std::string> fine_reasons, Rng& rng) {
  const auto reasons = augment_general_reasons(general_reasons, fine_reasons, rng);
  return render_answer(Component::kWholeFace, verdict, reasons);
}

// ---- pipeline -------------------------------------------------------------------

Split split_for_image(std::string_view image_id, int test_percent) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : image_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<int>(h % 100) < test_percent ? Split::kTest : Split::kTrain;
}

BuildResult build_dataset(std::span<const RawAnnotation> annotations, Rng& rng,
                          int test_percent) {
  std::map<std::string, std::map<Component, std::vector<RawAnnotation>>> by_image;
  for (const auto& a : annotations) by_image[a.image_id][a.component].push_back(a);

  BuildResult out;
  for (auto& [image_id, groups] : by_image) {
    bool answered = false;
    for (const auto& [c, annos] : groups)
      for (const auto& a : annos) answered = answered || a.verdict.has_value();

    struct Kept {
      Component component;
      Verdict verdict;
      std::vector<std::vector<std::string>> reasons;
      Manipulation manipulation;
    };
    std::vector<Kept> kept;
    for (auto& [component, annos] : groups) {
      AggregatedRecord rec;
      rec.image_id = image_id;
      rec.component = component;
      rec.gt_label = annos.front().gt_label;
      rec.manipulation = annos.front().manipulation;
      rec.image_has_answers = answered;
      std::map<std::string, std::set<Verdict>> per_annotator;
      for (const auto& a : annos)
        if (a.verdict) per_annotator[a.annotator_id].insert(*a.verdict);
      for (const auto& [who, verdicts] : per_annotator)
        rec.conflicting = rec.conflicting || verdicts.size() > 1;
      rec.majority = aggregate_majority(annos);

      const auto decision = quality_filter(rec);
      if (!decision.keep) {
        out.drops.push_back({image_id, component, *decision.reason});
        continue;
      }
      Kept k{component, *rec.majority.verdict, {}, rec.manipulation};
      for (const auto& r : rec.majority.reasons) {
        if (k.verdict == Verdict::kFake && r.empty()) continue;
        std::vector<std::string> cleaned;
        for (const auto& s : r) cleaned.push_back(canonical_reason(s));
        k.reasons.push_back(std::move(cleaned));
      }
      if (k.reasons.empty()) {
        out.drops.push_back({image_id, component, DropReason::kMissingReasons});
        continue;
      }
      if (k.reasons.size() > 3) k.reasons.resize(3);
      kept.push_back(std::move(k));
    }

    const Split split = split_for_image(image_id, test_percent);
    for (const auto& k : kept) {
      QARecord rec;
      rec.image_id = image_id;
      rec.component = k.component;
      rec.question = fine_grained_question(k.component);
      rec.verdict = k.verdict;
      rec.split = split;
      rec.manipulation = k.manipulation;
      if (k.component == Component::kWholeFace) {
        // Complementary reasons come from fine-grained answers sharing the verdict.
        std::vector<std::string> fine;
        for (const auto& other : kept) {
          if (other.component == Component::kWholeFace || other.verdict != k.verdict) continue;
          for (const auto& rs : other.reasons)
            for (const auto& r : rs) {
              auto phrase = component_reason(other.component, r);
              if (std::find(fine.begin(), fine.end(), phrase) == fine.end())
                fine.push_back(std::move(phrase));
            }
        }
        for (const auto& rs : k.reasons)
          rec.answers.push_back(augment_general_answer(k.verdict, rs, fine, rng));
      } else {
        for (const auto& rs : k.reasons) rec.answers.push_back(render_answer(k.component, k.verdict, rs));
      }
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

// ---- I/O --------------------------------------------------------------------

namespace {

RawAnnotation raw_from_json(const json& j) {
  RawAnnotation a;
  a.image_id = j.at("image_id").get<std::string>();
  a.component = parse_component(j.at("component").get<std::string>());
  a.annotator_id = j.at("annotator_id").get<std::string>();
  const auto& v = j.at("verdict");
  if (!v.is_null()) a.verdict = parse_verdict(v.get<std::string>());
  a.fakeness_rating = j.value("fakeness_rating", 0);
  if (j.contains("reasons")) a.reasons = j.at("reasons").get<std::vector<std::string>>();
  a.gt_label = parse_verdict(j.at("gt_label").get<std::string>());
  a.manipulation = parse_manipulation(j.at("manipulation").get<std::string>());

  if (a.fakeness_rating < 0 || a.fakeness_rating > 5)
    throw std::invalid_argument("fakeness_rating must lie in 0..5");
  if (a.verdict && (*a.verdict == Verdict::kReal) != (a.fakeness_rating <= 1))
    throw std::invalid_argument("rating 0-1 must pair with 'real' and 2-5 with 'fake'");
  if ((a.manipulation == Manipulation::kReal) != (a.gt_label == Verdict::kReal))
    throw std::invalid_argument("manipulation 'real' must pair with gt_label 'real'");
  return a;
}

}  // namespace

std::vector<RawAnnotation> read_raw_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open raw annotations '" + path.string() + "'");
  std::vector<RawAnnotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(raw_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": malformed annotation: " + e.what());
    }
  }
  return out;
}

std::string record_to_json_line(const QARecord& r) {
  json j = json::object();
  j["image_id"] = r.image_id;
  j["question"] = r.question;
  j["component"] = to_string(r.component);
  j["answers"] = r.answers;
  j["verdict"] = to_string(r.verdict);
  j["split"] = to_string(r.split);
  j["manipulation"] = to_string(r.manipulation);
  return j.dump();
}

QARecord record_from_json_line(std::string_view line) {
  const auto j = json::parse(line);
  static const std::set<std::string> fields{"image_id", "question", "component", "answers",
                                            "verdict",  "split",    "manipulation"};
  for (const auto& [k, v] : j.items())
    if (!fields.count(k)) throw std::invalid_argument("unexpected field '" + k + "'");
  QARecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.component = parse_component(j.at("component").get<std::string>());
  r.answers = j.at("answers").get<std::vector<std::string>>();
  r.verdict = parse_verdict(j.at("verdict").get<std::string>());
  r.split = parse_split(j.at("split").get<std::string>());
  r.manipulation = parse_manipulation(j.at("manipulation").get<std::string>());
  if (r.answers.empty() || r.answers.size() > 3)
    throw std::invalid_argument("a record carries 1 to 3 answers");
  return r;
}

std::vector<QARecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  std::vector<QARecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": malformed record: " + e.what());
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const QARecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset '" + path.string() + "'");
  for (const auto& r : records) out << record_to_json_line(r) << '\n';
}

CorpusStats corpus_stats(std::span<const QARecord> records) {
  CorpusStats s;
  std::set<std::string> images;
  for (auto m : kAllManipulations) s.by_manipulation[std::string(to_string(m))] = 0;
  for (auto c : kAllComponents) s.by_component[std::string(to_string(c))] = 0;
  for (const auto& r : records) {
    ++s.total_pairs;
    images.insert(r.image_id);
    ++s.by_manipulation[std::string(to_string(r.manipulation))];
    ++s.by_component[std::string(to_string(r.component))];
    ++s.by_split[std::string(to_string(r.split))];
    ++s.by_verdict[std::string(to_string(r.verdict))];
  }
  s.images = images.size();
  return s;
}

std::string stats_to_json(const CorpusStats& s) {
  json j = {{"total_pairs", s.total_pairs},     {"images", s.images},
            {"by_manipulation", s.by_manipulation}, {"by_component", s.by_component},
            {"by_split", s.by_split},           {"by_verdict", s.by_verdict}};
  return j.dump(2);
}

}  // namespace ddvqa::data
