// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// 8-bit RGB PNG reading/writing, plus per-frame PNG folders for video.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/latent.hpp"

namespace strata {

/// Encodes one frame of `sample` as an 8-bit RGB PNG.
std::vector<std::uint8_t> encode_png(const Sample& sample, int frame = 0);
Sample decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const Sample& sample, const std::string& path, int frame = 0);
Sample read_png(const std::string& path);

/// Writes frame_0000.png ... and meta.json {fps, frames} into `dir`.
void write_video_dir(const Sample& video, const std::string& dir);
Sample read_video_dir(const std::string& dir);

/// All *.png files in a folder (sorted by name), each as an image sample.
std::vector<Sample> read_png_folder(const std::string& dir);

}  // namespace strata
