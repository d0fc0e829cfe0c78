#include "kpl/io/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace kpl {

namespace {

std::string lower_ext(const std::string& path) {
  const size_t dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image<float> from_rgb8(const std::vector<unsigned char>& rgb, int h, int w, int channels) {
  Image<float> img({3, h, w});
  const int64_t plane = (int64_t)h * w;
  for (int64_t i = 0; i < plane; ++i) {
    if (channels == 1) {
      const float v = rgb[(size_t)i] / 255.0f;
      img[i] = v;
      img[plane + i] = v;
      img[2 * plane + i] = v;
    } else {
      img[i] = rgb[(size_t)(i * channels)] / 255.0f;
      img[plane + i] = rgb[(size_t)(i * channels + 1)] / 255.0f;
      img[2 * plane + i] = rgb[(size_t)(i * channels + 2)] / 255.0f;
    }
  }
  return img;
}

int pnm_next_value(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  if (!(in >> v)) throw std::runtime_error("pnm: malformed header");
  return v;
}

Image<float> load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  char p, n;
  in.get(p);
  in.get(n);
  if (p != 'P' || (n != '2' && n != '3' && n != '5' && n != '6'))
    throw std::runtime_error("pnm: unsupported magic in " + path);
  const bool color = (n == '3' || n == '6');
  const bool ascii = (n == '2' || n == '3');
  const int w = pnm_next_value(in);
  const int h = pnm_next_value(in);
  const int maxval = pnm_next_value(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw std::runtime_error("pnm: bad dimensions in " + path);
  const int channels = color ? 3 : 1;
  const int64_t count = (int64_t)w * h * channels;
  std::vector<unsigned char> data((size_t)count);
  if (ascii) {
    for (int64_t i = 0; i < count; ++i)
      data[(size_t)i] = (unsigned char)(255LL * pnm_next_value(in) / maxval);
  } else {
    in.get();  // single whitespace after maxval
    if (maxval < 256) {
      in.read(reinterpret_cast<char*>(data.data()), (std::streamsize)count);
      if (in.gcount() != (std::streamsize)count) throw std::runtime_error("pnm: truncated data in " + path);
    } else {
      std::vector<unsigned char> raw((size_t)count * 2);
      in.read(reinterpret_cast<char*>(raw.data()), (std::streamsize)raw.size());
      if (in.gcount() != (std::streamsize)raw.size()) throw std::runtime_error("pnm: truncated data in " + path);
      for (int64_t i = 0; i < count; ++i) {
        const int v = (raw[(size_t)(2 * i)] << 8) | raw[(size_t)(2 * i + 1)];
        data[(size_t)i] = (unsigned char)(255 * v / maxval);
      }
    }
  }
  return from_rgb8(data, h, w, channels);
}

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

Image<float> load_png_file(const std::string& path) {
  PngReadCloser c;
  c.fp = std::fopen(path.c_str(), "rb");
  if (!c.fp) throw std::runtime_error("cannot open image: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, c.fp) != 8 || png_sig_cmp(sig, 0, 8)) throw std::runtime_error("png: bad signature: " + path);
  c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  c.info = png_create_info_struct(c.png);
  if (!c.png || !c.info) throw std::runtime_error("png: init failed");
  if (setjmp(png_jmpbuf(c.png))) throw std::runtime_error("png: decode failed: " + path);
  png_init_io(c.png, c.fp);
  png_set_sig_bytes(c.png, 8);
  png_read_info(c.png, c.info);
  png_set_expand(c.png);
  png_set_strip_16(c.png);
  png_set_strip_alpha(c.png);
  png_set_gray_to_rgb(c.png);
  png_read_update_info(c.png, c.info);
  const int w = (int)png_get_image_width(c.png, c.info);
  const int h = (int)png_get_image_height(c.png, c.info);
  std::vector<unsigned char> data((size_t)w * h * 3);
  std::vector<png_bytep> rows((size_t)h);
  for (int y = 0; y < h; ++y) rows[(size_t)y] = data.data() + (size_t)y * w * 3;
  png_read_image(c.png, rows.data());
  return from_rgb8(data, h, w, 3);
}

Image<float> load_jpeg_file(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open image: " + path);
  jpeg_decompress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jerr.error_exit = [](j_common_ptr ci) {
    char msg[JMSG_LENGTH_MAX];
    (*ci->err->format_message)(ci, msg);
    throw std::runtime_error(std::string("jpeg: ") + msg);
  };
  try {
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int w = (int)cinfo.output_width, h = (int)cinfo.output_height;
    std::vector<unsigned char> data((size_t)w * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      unsigned char* row = data.data() + (size_t)cinfo.output_scanline * w * 3;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    return from_rgb8(data, h, w, 3);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    throw;
  }
}

}  // namespace

bool is_supported_image(const std::string& path) {
  const std::string ext = lower_ext(path);
  return ext == "ppm" || ext == "pgm" || ext == "pnm" || ext == "png" || ext == "jpg" || ext == "jpeg";
}

Image<float> load_image(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == "ppm" || ext == "pgm" || ext == "pnm") return load_pnm(path);
  if (ext == "png") return load_png_file(path);
  if (ext == "jpg" || ext == "jpeg") return load_jpeg_file(path);
  throw std::runtime_error("unsupported image format: " + path);
}

void save_ppm(const std::string& path, const Image<float>& img) {
  const int h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  const int64_t plane = (int64_t)h * w;
  std::vector<unsigned char> row((size_t)w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img[(int64_t)c * plane + (int64_t)y * w + x], 0.0f, 1.0f);
        row[(size_t)(x * 3 + c)] = (unsigned char)std::lround(v * 255.0f);
      }
    out.write(reinterpret_cast<const char*>(row.data()), (std::streamsize)row.size());
  }
}

void save_png(const std::string& path, const Image<float>& img) {
  const int h = img.dim(1), w = img.dim(2);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write image: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("png: encode failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, (png_uint_32)w, (png_uint_32)h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int64_t plane = (int64_t)h * w;
  std::vector<unsigned char> row((size_t)w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img[(int64_t)c * plane + (int64_t)y * w + x], 0.0f, 1.0f);
        row[(size_t)(x * 3 + c)] = (unsigned char)std::lround(v * 255.0f);
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace kpl
