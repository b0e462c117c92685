// 8-bit grayscale image files (binary PGM / PNG) with a JSON sidecar
// carrying the physical pixel spacing.

#pragma once

#include <string>

#include "regsynth/image.hpp"

namespace regsynth {

// Sidecar path: extension replaced by ".json" ("a/b/img.png" -> "a/b/img.json").
std::string sidecar_path(const std::string& image_path);

// Writers round-clamp intensities to [0, 255] and emit the sidecar
// { "spacing_mm": <float> } next to the image.
void write_pgm(const Image2D& img, const std::string& path);
void write_png(const Image2D& img, const std::string& path);

// Readers dispatch on the magic bytes; a missing sidecar defaults the
// spacing to 1 mm. Only 8-bit grayscale content is accepted.
Image2D read_image(const std::string& path);

// Scalar raster as little-endian float32, row-major, with the usual
// sidecar; used for diagnostic maps that exceed 8-bit range.
void write_raw_raster(const Image2D& img, const std::string& path);
Image2D read_raw_raster(const std::string& path);

} // namespace regsynth
