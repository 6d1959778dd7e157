#include "eedkit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace eedkit {

namespace fs = std::filesystem;

namespace {

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

struct PngImage {
  png_image img;
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

Image decode_png(std::span<const std::uint8_t> bytes) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, bytes.data(), bytes.size())) {
    throw IoError(std::string("PNG decode failed: ") + p.img.message);
  }
  const bool gray = (p.img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  p.img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(p.img));
  // A background is needed when alpha is stripped; composite onto black.
  png_color black{0, 0, 0};
  if (!png_image_finish_read(&p.img, &black, buf.data(), 0, nullptr)) {
    throw IoError(std::string("PNG decode failed: ") + p.img.message);
  }
  const int h = static_cast<int>(p.img.height);
  const int w = static_cast<int>(p.img.width);
  Image out(h, w, channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        out(y, x, c) = buf[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
      }
    }
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Corrupt-data warnings are not printed; the caller sees errors as IoError.
void jpeg_silent(j_common_ptr) {}

// Only trivially destructible locals live between setjmp and longjmp.
bool decode_jpeg_raw(const std::uint8_t* data, std::size_t size, std::uint8_t* out,
                     std::size_t out_size, int* height, int* width, int* channels,
                     char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  jerr.base.output_message = jpeg_silent;
  if (setjmp(jerr.jump)) {
    std::strncpy(message, jerr.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = (cinfo.num_components == 1) ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  *height = static_cast<int>(cinfo.output_height);
  *width = static_cast<int>(cinfo.output_width);
  *channels = cinfo.output_components;
  const std::size_t stride = static_cast<std::size_t>(*width) * *channels;
  if (out == nullptr || stride * *height > out_size) {
    jpeg_abort_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;  // size query only
  }
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out + stride * cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  char message[JMSG_LENGTH_MAX] = {0};
  int h = 0, w = 0, channels = 0;
  if (!decode_jpeg_raw(bytes.data(), bytes.size(), nullptr, 0, &h, &w, &channels, message)) {
    throw IoError(std::string("JPEG decode failed: ") + message);
  }
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * channels);
  if (!decode_jpeg_raw(bytes.data(), bytes.size(), buf.data(), buf.size(), &h, &w, &channels,
                       message)) {
    throw IoError(std::string("JPEG decode failed: ") + message);
  }
  Image out(h, w, channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        out(y, x, c) = buf[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
      }
    }
  }
  return out;
}

Bytes encode_png_buffer(const std::uint8_t* pixels, int height, int width, int channels) {
  PngImage p;
  p.img.width = static_cast<png_uint_32>(width);
  p.img.height = static_cast<png_uint_32>(height);
  p.img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p.img, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + p.img.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&p.img, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + p.img.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");
  return data;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "'");
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw IoError("write error on '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into '" + path.string() + "': " + ec.message());
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) return decode_jpeg(bytes);
  throw IoError("unrecognized image format");
}

Image load_image(const fs::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::uint8_t quantize_sample(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  // nearbyint uses the default rounding mode, round-half-to-even
  return static_cast<std::uint8_t>(std::nearbyint(clamped * 255.0));
}

Bytes encode_png(const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw ParameterError("PNG encoding needs 1 or 3 channels");
  }
  const int h = img.height();
  const int w = img.width();
  const int ch = img.channels();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        buf[(static_cast<std::size_t>(y) * w + x) * ch + c] = quantize_sample(img(y, x, c));
      }
    }
  }
  return encode_png_buffer(buf.data(), h, w, ch);
}

void save_png(const fs::path& path, const Image& img) { write_file_atomic(path, encode_png(img)); }

GrayRaster decode_gray_png(std::span<const std::uint8_t> bytes) {
  if (!is_png(bytes)) throw IoError("label masks must be PNG");
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, bytes.data(), bytes.size())) {
    throw IoError(std::string("PNG decode failed: ") + p.img.message);
  }
  if (p.img.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP)) {
    // palette PNGs with gray entries are still rejected; masks must be gray.
    throw IoError("label mask must be a single-channel PNG");
  }
  // 16-bit data would be gamma-encoded on the way to 8 bits, alpha composited
  if (p.img.format & (PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_ALPHA)) {
    throw IoError("label mask must be 8-bit gray without alpha");
  }
  p.img.format = PNG_FORMAT_GRAY;
  GrayRaster r;
  r.height = static_cast<int>(p.img.height);
  r.width = static_cast<int>(p.img.width);
  r.pixels.resize(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, r.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG decode failed: ") + p.img.message);
  }
  return r;
}

Bytes encode_gray_png(const GrayRaster& raster) {
  if (raster.pixels.size() != static_cast<std::size_t>(raster.height) * raster.width) {
    throw ParameterError("raster size mismatch");
  }
  return encode_png_buffer(raster.pixels.data(), raster.height, raster.width, 1);
}

}  // namespace eedkit
