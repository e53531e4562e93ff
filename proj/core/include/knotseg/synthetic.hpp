#pragma once

// Procedural datasets with exact ground truth.

#include <cstdint>
#include <string>
#include <vector>

#include "knotseg/imagecore.hpp"

namespace knotseg {

enum class SyntheticKind : std::uint8_t { TextureMosaic = 0, BlobWorld = 1, AnisotropicVolume = 2 };
const char* to_string(SyntheticKind kind);
SyntheticKind synthetic_kind_from_string(const std::string& s);

struct Grating {
  double orientation_deg = 0.0;
  double wavelength = 6.0;
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::TextureMosaic;
  int size = 256;
  int depth = 24;  // slices, volumes only
  double noise = 0.08;
  std::uint64_t seed = 0;

  // texture mosaic: `target` fills the top-left and bottom-right quadrants
  Grating target{0.0, 6.0};
  Grating other{60.0, 11.0};

  // blob world
  double blob_scale = 0.0;      // smoothing sigma of the blob field; 0: size / 16
  int band_width = 2;           // boundary band half-width
  double band_noise = 0.25;     // extra noise inside the band
  int distractors = 0;          // small bright background discs; -1: size^2 / 2048
  double contrast = 0.35;
};

struct SyntheticImage {
  ImagePlane image;
  LabelMap labels;  // +1 / -1
};

struct SyntheticVolume {
  Volume image;
  std::vector<LabelMap> labels;  // one per slice
};

SyntheticImage texture_mosaic(const SyntheticSpec& spec);
SyntheticImage blob_world(const SyntheticSpec& spec);
/// Thin plates normal to x spanning part of y and z, plus tubes along z.
/// Slices are blurred along x only, which smears the plates in X-Y.
SyntheticVolume anisotropic_volume(const SyntheticSpec& spec);

/// Noise-free grating value in [0, 1] for the given phase.
double grating_value(const Grating& g, double x, double y, double phase);

}  // namespace knotseg
