#pragma once

#include <string>

#include "anyres/image.hpp"

namespace anyres {

// PNG or JPEG by file extension; 8-bit, converted to float CHW in [0,1].
Image load_image(const std::string& path);
void save_png(const std::string& path, const Image& img);
void save_jpeg(const std::string& path, const Image& img, int quality = 95);

}  // namespace anyres
