#pragma once

// Procedural face-like images with planted artifacts, plus simulated
// three-annotator labels fed through the regular dataset pipeline.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ddvqa/dataset.hpp"
#include "ddvqa/image.hpp"

namespace ddvqa::data {

struct ArtifactType {
  Component component = Component::kEyebrows;
  std::string phrase;

  bool operator==(const ArtifactType&) const = default;
};

/// Every artifact the renderer can plant.
const std::vector<ArtifactType>& artifact_catalogue();
/// "eyebrows:overlapped" ↔ ArtifactType.
std::string artifact_key(const ArtifactType& a);
ArtifactType parse_artifact_key(std::string_view key);

/// Artifacts used for training corpora when cross-testing, and the held-out
/// complement used for the cross-testing corpus.
std::vector<ArtifactType> seen_artifacts();
std::vector<ArtifactType> held_out_artifacts();

/// Appearance traits of authentic components, one chosen per component.
const std::vector<std::string>& real_traits(Component c);
const std::string& general_fake_reason();
const std::string& general_real_reason();

struct SyntheticConfig {
  std::size_t n_images = 300;
  double p_fake = 0.5;
  std::uint32_t image_size = 64;
  std::vector<ArtifactType> artifacts = artifact_catalogue();
  int test_percent = 10;
  std::string id_prefix = "img";
  double annotator_accuracy = 0.92;
  double skip_rate = 0.04;
  double conflict_rate = 0.01;
};

struct SyntheticImage {
  std::string image_id;
  Image pixels;
  /// (component, phrase) actually rendered: artifacts on fake components and
  /// the appearance trait of every component.
  std::vector<std::pair<Component, std::string>> planted;
  Verdict label = Verdict::kReal;
  Manipulation manipulation = Manipulation::kReal;
};

struct SyntheticCorpus {
  std::vector<QARecord> records;
  std::vector<SyntheticImage> images;
  std::vector<RawAnnotation> raw;
  std::vector<DropEntry> drops;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config, std::uint64_t seed);

/// Renders one face. `artifacts` lists the artifacts to plant (empty = real).
SyntheticImage render_face(const std::string& image_id, std::uint32_t size,
                           const std::vector<ArtifactType>& artifacts, Rng& rng);

}  // namespace ddvqa::data
