#pragma once

// On-disk formats. All multi-byte binary fields are little-endian.
//
//   color       binary PPM (P6, maxval 255)
//   labels      binary PGM (P5, maxval 255), 255 = ignore
//   depth       "GSD1" | u32 width | u32 height | u16 depth_mm[width*height]   (0 = missing)
//   pose        4x4 row-major camera-to-world matrix as text, one row per line
//   manifest    manifest.json, see write_dataset
//   checkpoint  see write_checkpoint

#include <filesystem>
#include <map>
#include <string>

#include "geoseg/dataset.hpp"
#include "geoseg/frame.hpp"
#include "geoseg/trainer.hpp"

namespace geoseg::io {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_ppm(const fs::path& path, const ColorImage& image);
ColorImage read_ppm(const fs::path& path);
void write_pgm(const fs::path& path, const LabelMap& labels);
LabelMap read_pgm(const fs::path& path);
void write_depth(const fs::path& path, const DepthMap& depth);
DepthMap read_depth(const fs::path& path);
void write_pose(const fs::path& path, const RigidTransform& pose);
RigidTransform read_pose(const fs::path& path);

/// Writes `root/manifest.json` plus one directory of rasters per sequence.
void write_dataset(const Dataset& ds, const fs::path& root);
/// Loads a dataset written by write_dataset. Errors name the offending file and field.
Dataset read_dataset(const fs::path& root);

/// Propagated label maps under `root/propagated/`, keyed by frame id.
void write_propagated(const std::map<std::string, LabelMap>& labels, const fs::path& root);
std::map<std::string, LabelMap> read_propagated(const fs::path& root);
bool has_propagated(const fs::path& root);

/// Layout: "GSCKPT\0\0" | u32 version | i32 levels, base_features, num_classes, height,
/// width | u64 step | u64 adam_steps | u8 pretrained | f64 best_accuracy | u64 best_step |
/// u32 parameter count | per parameter: u32 name length, name bytes, u32 rank, i32 dims |
/// f32 data of every parameter for: weights, Adam m, Adam v, best snapshot |
/// u64 FNV-1a checksum of all preceding bytes.
void write_checkpoint(const TrainState& state, const fs::path& path);
/// Reads a checkpoint completely before returning; truncated, corrupted or
/// version-mismatched files raise FormatError and yield no state.
TrainState read_checkpoint(const fs::path& path);

}  // namespace geoseg::io
