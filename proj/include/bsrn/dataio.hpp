// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// PNG I/O and benchmark dataset ingestion.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bsrn/imaging.hpp"

namespace bsrn::dataio {

/// 8-bit RGB, grayscale or palette PNG; grayscale and palette become RGB.
/// 16-bit, interlaced and alpha images are rejected with FormatError.
imaging::PlanarImage load_png(const std::filesystem::path& path);
/// 8-bit RGB; written to a temporary file and renamed into place.
void save_png(const imaging::PlanarImage& img, const std::filesystem::path& path);

/// Writes `content` to a sibling temporary file, then renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

enum class CropPolicy { Reject, CenterCrop };

struct IngestOptions {
  CropPolicy crop = CropPolicy::CenterCrop;
  /// Generate LR with antialiased bicubic when the LR_x{scale} folder is absent.
  bool generate_missing_lr = true;
};

struct DatasetPair {
  std::string stem;
  imaging::PlanarImage lr;
  imaging::PlanarImage hr;
};

/// root/HR/<stem>.png paired with root/LR_x<scale>/<stem>.png, sorted by stem.
/// Every orphan and size mismatch is reported in one FormatError.
std::vector<DatasetPair> ingest_dataset(const std::filesystem::path& root, int scale, const IngestOptions& opts = {});

/// HR images only (for pipelines that derive LR themselves), sorted by stem.
std::vector<std::pair<std::string, imaging::PlanarImage>> load_hr_folder(const std::filesystem::path& dir);

}  // namespace bsrn::dataio
