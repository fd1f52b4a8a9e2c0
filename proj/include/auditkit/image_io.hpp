#pragma once

#include <string>

#include "auditkit/tensor.hpp"

// Raster codecs for the ingestion path. Decoded images come back as [C,H,W]
// tensors with values in [0,1], C either 1 (gray) or 3 (RGB). All decode
// failures surface as io_error with the path in the message.

namespace audit {

Tensor read_png(const std::string& path);
Tensor read_pnm(const std::string& path);  // binary P5 (gray) and P6 (RGB), 8-bit

// Dispatches on file extension (.png, .pgm, .ppm, case-insensitive).
Tensor read_image(const std::string& path);

void write_png(const std::string& path, const Tensor& chw);
void write_pnm(const std::string& path, const Tensor& chw);  // P5 for 1 channel, P6 for 3

}  // namespace audit
