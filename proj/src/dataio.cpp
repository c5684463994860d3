// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>

namespace bsrn::dataio {

namespace fs = std::filesystem;
using imaging::PlanarImage;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void on_png_error(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf != nullptr) *buf = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

fs::path temp_sibling(const fs::path& path) { return path.string() + ".tmp"; }

}  // namespace

PlanarImage load_png(const fs::path& path) {
  const std::string name = path.string();
  FilePtr file(std::fopen(name.c_str(), "rb"));
  if (!file) throw FormatError("png: cannot open " + name);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("png: " + name + " is not a PNG file");
  }

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (png == nullptr) throw FormatError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError("png: out of memory");
  }

  // Anything that can throw stays outside the setjmp region.
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  int color_type = 0;
  int interlace = 0;
  std::string reject;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: " + name + ": " + (err.empty() ? std::string("decode error") : err));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, &interlace, nullptr, nullptr);
  const bool has_trns = png_get_valid(png, info, PNG_INFO_tRNS) != 0;
  if (bit_depth == 16) {
    reject = "16-bit depth unsupported (8-bit only)";
  } else if (interlace != PNG_INTERLACE_NONE) {
    reject = "interlaced images unsupported";
  } else if ((color_type & PNG_COLOR_MASK_ALPHA) != 0 || has_trns) {
    reject = "alpha channel unsupported";
  }
  if (reject.empty()) {
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY) {
      if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
      png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(width) * 3) {
      reject = "unexpected row layout";
    } else {
      pixels.resize(stride * height);
      rows.resize(height);
      for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
      png_read_image(png, rows.data());
      png_read_end(png, nullptr);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!reject.empty()) {
    throw FormatError("png: " + name + ": " + reject + " (bit depth " + std::to_string(bit_depth) +
                      ", color type " + std::to_string(color_type) + ")");
  }

  PlanarImage img(static_cast<int>(width), static_cast<int>(height));
  for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i) {
    for (int c = 0; c < 3; ++c) img.planes[c][i] = pixels[i * 3 + c];
  }
  return img;
}

void save_png(const PlanarImage& img, const fs::path& path) {
  std::vector<png_byte> interleaved(static_cast<std::size_t>(img.width) * img.height * 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(img.width) * img.height; ++i) {
    for (int c = 0; c < 3; ++c) interleaved[i * 3 + c] = img.planes[c][i];
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  if (png_image_write_to_file(&image, tmp.string().c_str(), 0, interleaved.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    fs::remove(tmp);
    throw FormatError("png: cannot write " + path.string() + ": " + msg);
  }
  fs::rename(tmp, path);
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw FormatError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

std::string dims(const PlanarImage& img) { return std::to_string(img.width) + "x" + std::to_string(img.height); }

}  // namespace

std::vector<std::pair<std::string, PlanarImage>> load_hr_folder(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("dataset: not a directory: " + dir.string());
  std::vector<std::pair<std::string, PlanarImage>> out;
  for (const auto& [stem, path] : list_pngs(dir)) out.emplace_back(stem, load_png(path));
  if (out.empty()) throw FormatError("dataset: no PNG files in " + dir.string());
  return out;
}

std::vector<DatasetPair> ingest_dataset(const fs::path& root, int scale, const IngestOptions& opts) {
  if (scale < 2 || scale > 4) throw ConfigError("dataset: scale must be 2, 3 or 4");
  const fs::path hr_dir = root / "HR";
  const fs::path lr_dir = root / ("LR_x" + std::to_string(scale));
  if (!fs::is_directory(hr_dir)) throw FormatError("dataset: missing HR directory " + hr_dir.string());
  const bool have_lr = fs::is_directory(lr_dir);
  if (!have_lr && !opts.generate_missing_lr) throw FormatError("dataset: missing LR directory " + lr_dir.string());

  const auto hr_files = list_pngs(hr_dir);
  const auto lr_files = have_lr ? list_pngs(lr_dir) : std::map<std::string, fs::path>{};
  std::vector<std::string> problems;
  if (have_lr) {
    for (const auto& [stem, path] : lr_files) {
      if (!hr_files.contains(stem)) problems.push_back("LR file " + stem + " has no HR partner");
    }
    for (const auto& [stem, path] : hr_files) {
      if (!lr_files.contains(stem)) problems.push_back("HR file " + stem + " has no LR partner");
    }
  }

  std::vector<DatasetPair> pairs;
  for (const auto& [stem, hr_path] : hr_files) {
    PlanarImage hr = load_png(hr_path);
    if (hr.width % scale != 0 || hr.height % scale != 0) {
      if (opts.crop == CropPolicy::Reject) {
        problems.push_back("HR file " + stem + " is " + dims(hr) + ", not divisible by scale " +
                           std::to_string(scale));
        continue;
      }
      hr = imaging::center_crop_to_multiple(hr, scale);
    }
    if (have_lr) {
      auto it = lr_files.find(stem);
      if (it == lr_files.end()) continue;
      PlanarImage lr = load_png(it->second);
      if (lr.width * scale != hr.width || lr.height * scale != hr.height) {
        problems.push_back("LR file " + stem + " is " + dims(lr) + ", expected " +
                           std::to_string(hr.width / scale) + "x" + std::to_string(hr.height / scale));
        continue;
      }
      pairs.push_back({stem, std::move(lr), std::move(hr)});
    } else {
      PlanarImage lr = imaging::bicubic_resize(hr, hr.height / scale, hr.width / scale, true);
      pairs.push_back({stem, std::move(lr), std::move(hr)});
    }
  }
  if (hr_files.empty()) problems.push_back("no PNG files in " + hr_dir.string());
  if (!problems.empty()) {
    std::string msg = "dataset: " + std::to_string(problems.size()) + " problem(s): ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw FormatError(msg);
  }
  return pairs;
}

}  // namespace bsrn::dataio
