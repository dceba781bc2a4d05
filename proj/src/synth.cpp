// Copyright 2026 The Vton Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "vton/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "vton/rng.hpp"

namespace vton {

Image8::Image8(int h, int w, Rgb fill) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + static_cast<long>(i));
}

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::kSolid: return "solid";
    case Pattern::kStripes: return "stripes";
    case Pattern::kChecker: return "checker";
    case Pattern::kLogoGlyph: return "logo-glyph";
  }
  return "?";
}

std::optional<Pattern> parse_pattern(std::string_view text) {
  for (int i = 0; i < kPatternCount; ++i) {
    if (to_string(static_cast<Pattern>(i)) == text) return static_cast<Pattern>(i);
  }
  return std::nullopt;
}

namespace {

constexpr Rgb kGarmentColors[] = {{220, 40, 40},  {40, 90, 200},   {40, 160, 70},  {240, 200, 40},
                                  {150, 60, 170}, {250, 130, 30},  {30, 170, 180}, {230, 100, 160},
                                  {40, 40, 40},   {120, 80, 40},   {90, 150, 230}, {180, 220, 60}};
constexpr Rgb kBackgrounds[] = {{170, 190, 200}, {200, 190, 170}, {160, 180, 160},
                                {190, 170, 190}, {120, 130, 150}, {210, 210, 200}};
constexpr Rgb kSkins[] = {{241, 194, 160}, {224, 172, 134}, {198, 134, 96}, {141, 85, 54}, {255, 219, 172}};
constexpr Rgb kPants[] = {{40, 50, 80}, {60, 60, 60}, {90, 70, 50}, {30, 70, 60}};
constexpr Rgb kHair{50, 35, 25};
constexpr Rgb kWhite{255, 255, 255};
constexpr int kPeriods[] = {6, 8, 10, 12, 16};

// 5x5 glyphs, row-major, most significant of 25 bits first.
constexpr std::uint32_t kGlyphs[] = {
    0b0010001110111110111000100,  // diamond
    0b1000101010001000101010001,  // x
    0b0010000100111110010000100,  // plus
    0b0101011111111110111000100,  // heart
    0b1111110001100011000111111,  // square ring
    0b0010001010100011000111111,  // triangle
};
constexpr int kGlyphCount = static_cast<int>(std::size(kGlyphs));

template <typename T, std::size_t N>
const T& pick(const T (&table)[N], Rng& rng) {
  return table[rng.below(N)];
}

int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

struct Box {
  int x0, y0, x1, y1;  // half-open
};

Box garment_box(const SceneSpec& s) {
  return {s.head_cx - s.torso_half_width - s.arm_width, s.shoulder_y, s.head_cx + s.torso_half_width + s.arm_width, s.hem_y};
}

bool in_garment(const SceneSpec& s, int y, int x) {
  const int cx = s.head_cx;
  if (y < s.shoulder_y || y >= s.hem_y) return false;
  if (x >= cx - s.torso_half_width && x < cx + s.torso_half_width) {
    const int dx = x - cx, dy = y - s.shoulder_y;
    const int r = s.neck_r + 2;
    return dx * dx + dy * dy >= r * r;
  }
  const bool arm = (x >= cx - s.torso_half_width - s.arm_width && x < cx - s.torso_half_width) ||
                   (x >= cx + s.torso_half_width && x < cx + s.torso_half_width + s.arm_width);
  return arm && y >= s.shoulder_y + 2 && y < s.shoulder_y + 2 + s.sleeve_length;
}

// Garment color at garment-local coordinates.
Rgb garment_color(const SceneSpec& s, int ly, int lx) {
  switch (s.pattern) {
    case Pattern::kSolid: return s.color1;
    case Pattern::kStripes: return ((s.vertical ? lx : ly) / s.period) % 2 ? s.color2 : s.color1;
    case Pattern::kChecker: return ((lx / s.period) + (ly / s.period)) % 2 ? s.color2 : s.color1;
    case Pattern::kLogoGlyph: {
      const Box b = garment_box(s);
      const int cell = std::max(2, s.period / 2);
      const int gx = lx - ((b.x1 - b.x0) / 2 - 5 * cell / 2);
      const int gy = ly - ((b.y1 - b.y0) / 2 - 5 * cell / 2);
      if (gx < 0 || gy < 0 || gx >= 5 * cell || gy >= 5 * cell) return s.color1;
      const int bit = 24 - ((gy / cell) * 5 + gx / cell);
      return (kGlyphs[s.glyph] >> bit) & 1u ? s.color2 : s.color1;
    }
  }
  return s.color1;
}

void put(Image8& img, int y, int x, Rgb c) {
  if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
  std::copy(c.begin(), c.end(), img.px(y, x));
}

void fill_rect(Image8& img, int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) put(img, y, x, c);
}

}  // namespace

SceneSpec random_spec(std::uint64_t seed, int height, int width) {
  if (height < 32 || width < 24) throw std::invalid_argument("random_spec: canvas too small");
  Rng rng(seed);
  const double sy = height / 128.0, sx = width / 96.0;
  auto X = [sx](int v) { return static_cast<int>(std::lround(v * sx)); };
  auto Y = [sy](int v) { return static_cast<int>(std::lround(v * sy)); };
  SceneSpec s;
  s.seed = seed;
  s.height = height;
  s.width = width;
  s.background = pick(kBackgrounds, rng);
  s.skin = pick(kSkins, rng);
  s.pants = pick(kPants, rng);
  const int cx = 48 + uniform_int(rng, -5, 5);
  const int head_r = uniform_int(rng, 9, 12);
  const int head_cy = 6 + head_r + uniform_int(rng, 0, 4);
  const int shoulder = head_cy + head_r + uniform_int(rng, 3, 6);
  s.head_cx = X(cx);
  s.head_cy = Y(head_cy);
  s.head_r = std::max(2, Y(head_r));
  s.shoulder_y = Y(shoulder);
  s.torso_half_width = X(uniform_int(rng, 18, 24));
  s.arm_width = std::max(2, X(uniform_int(rng, 7, 10)));
  s.hem_y = std::min(Y(shoulder + uniform_int(rng, 44, 58)), Y(120));
  s.sleeve_length = Y(uniform_int(rng, 8, 22));
  s.neck_r = std::max(1, X(uniform_int(rng, 4, 7)));
  s.pattern = static_cast<Pattern>(rng.below(kPatternCount));
  const std::size_t c1 = rng.below(std::size(kGarmentColors));
  std::size_t c2 = rng.below(std::size(kGarmentColors) - 1);
  if (c2 >= c1) ++c2;
  s.color1 = kGarmentColors[c1];
  s.color2 = kGarmentColors[c2];
  s.period = std::max(2, Y(pick(kPeriods, rng)));
  s.vertical = static_cast<int>(rng.below(2));
  s.glyph = static_cast<int>(rng.below(kGlyphCount));
  validate(s);
  return s;
}

void validate(const SceneSpec& s) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("SceneSpec: " + what); };
  if (s.height <= 0 || s.width <= 0) fail("non-positive canvas");
  const Box b = garment_box(s);
  if (b.x0 < 0 || b.y0 < 0 || b.x1 > s.width || b.y1 > s.height || b.x0 >= b.x1 || b.y0 >= b.y1) fail("garment box leaves canvas");
  if (s.period < 1 || s.head_r < 1 || s.arm_width < 1 || s.neck_r < 1 || s.sleeve_length < 0) fail("non-positive geometry");
  if (s.glyph < 0 || s.glyph >= kGlyphCount) fail("glyph index out of range");
  if (s.vertical != 0 && s.vertical != 1) fail("vertical must be 0 or 1");
}

SamplePair gen_sample(const SceneSpec& s) {
  validate(s);
  SamplePair out;
  out.spec = s;
  Image8 img(s.height, s.width, s.background);
  const int cx = s.head_cx;
  const int arm_end = s.height - std::max(2, s.height / 10);
  fill_rect(img, cx - s.torso_half_width - s.arm_width, s.shoulder_y + 2, cx - s.torso_half_width, arm_end, s.skin);
  fill_rect(img, cx + s.torso_half_width, s.shoulder_y + 2, cx + s.torso_half_width + s.arm_width, arm_end, s.skin);
  fill_rect(img, cx - s.torso_half_width, s.shoulder_y, cx + s.torso_half_width, s.height, s.skin);
  fill_rect(img, cx - s.torso_half_width, s.hem_y, cx + s.torso_half_width, s.height, s.pants);
  fill_rect(img, cx - s.neck_r, s.head_cy, cx + s.neck_r, s.shoulder_y + 1, s.skin);
  for (int y = s.head_cy - s.head_r; y <= s.head_cy + s.head_r; ++y) {
    for (int x = cx - s.head_r; x <= cx + s.head_r; ++x) {
      const int dx = x - cx, dy = y - s.head_cy;
      if (dx * dx + dy * dy > s.head_r * s.head_r) continue;
      put(img, y, x, dy < -s.head_r / 3 ? kHair : s.skin);
    }
  }

  const Box b = garment_box(s);
  out.mask = Mask(s.height, s.width);
  out.garment = Image8(s.height, s.width, kWhite);
  const int ox = (s.width - (b.x1 - b.x0)) / 2 - b.x0;
  const int oy = (s.height - (b.y1 - b.y0)) / 2 - b.y0;
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      if (!in_garment(s, y, x)) continue;
      const Rgb c = garment_color(s, y - b.y0, x - b.x0);
      put(img, y, x, c);
      put(out.garment, y + oy, x + ox, c);
      out.mask.at(y, x) = 1;
    }
  }
  out.person = std::move(img);
  return out;
}

namespace {

std::string rgb_text(const Rgb& c) { return std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]); }

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

bool parse_rgb(std::string_view s, Rgb& out) {
  int vals[3];
  for (int i = 0; i < 3; ++i) {
    const std::size_t comma = i < 2 ? s.find(',') : s.size();
    if (comma == std::string_view::npos) return false;
    if (!parse_number(s.substr(0, comma), vals[i]) || vals[i] < 0 || vals[i] > 255) return false;
    s = i < 2 ? s.substr(comma + 1) : std::string_view{};
  }
  for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(vals[i]);
  return true;
}

// Splits text into lines, skipping blanks and '#' comments; reports each
// line's starting byte offset.
void for_each_line(std::string_view text, const std::function<void(std::string_view, std::size_t)>& fn) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty() && line.front() != '#') fn(line, pos);
    pos = end + 1;
  }
}

}  // namespace

std::string format_spec(const SceneSpec& s) {
  std::ostringstream o;
  o << "# vton-scene v1\n"
    << "seed=" << s.seed << "\n"
    << "height=" << s.height << "\n"
    << "width=" << s.width << "\n"
    << "background=" << rgb_text(s.background) << "\n"
    << "skin=" << rgb_text(s.skin) << "\n"
    << "pants=" << rgb_text(s.pants) << "\n"
    << "head_cx=" << s.head_cx << "\n"
    << "head_cy=" << s.head_cy << "\n"
    << "head_r=" << s.head_r << "\n"
    << "shoulder_y=" << s.shoulder_y << "\n"
    << "torso_half_width=" << s.torso_half_width << "\n"
    << "arm_width=" << s.arm_width << "\n"
    << "hem_y=" << s.hem_y << "\n"
    << "sleeve_length=" << s.sleeve_length << "\n"
    << "neck_r=" << s.neck_r << "\n"
    << "pattern=" << to_string(s.pattern) << "\n"
    << "color1=" << rgb_text(s.color1) << "\n"
    << "color2=" << rgb_text(s.color2) << "\n"
    << "period=" << s.period << "\n"
    << "vertical=" << s.vertical << "\n"
    << "glyph=" << s.glyph << "\n";
  return o.str();
}

SceneSpec parse_spec(std::string_view text) {
  SceneSpec s;
  std::map<std::string, int*> ints{{"height", &s.height},
                                   {"width", &s.width},
                                   {"head_cx", &s.head_cx},
                                   {"head_cy", &s.head_cy},
                                   {"head_r", &s.head_r},
                                   {"shoulder_y", &s.shoulder_y},
                                   {"torso_half_width", &s.torso_half_width},
                                   {"arm_width", &s.arm_width},
                                   {"hem_y", &s.hem_y},
                                   {"sleeve_length", &s.sleeve_length},
                                   {"neck_r", &s.neck_r},
                                   {"period", &s.period},
                                   {"vertical", &s.vertical},
                                   {"glyph", &s.glyph}};
  std::map<std::string, Rgb*> colors{
      {"background", &s.background}, {"skin", &s.skin}, {"pants", &s.pants}, {"color1", &s.color1}, {"color2", &s.color2}};
  std::map<std::string, bool> seen;
  for_each_line(text, [&](std::string_view line, std::size_t offset) {
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("spec: expected key=value", offset);
    const std::string key(line.substr(0, eq));
    const std::string_view value = line.substr(eq + 1);
    const std::size_t voff = offset + eq + 1;
    if (seen[key]) throw ParseError("spec: duplicate key '" + key + "'", offset);
    seen[key] = true;
    if (key == "seed") {
      if (!parse_number(value, s.seed)) throw ParseError("spec: bad seed", voff);
    } else if (key == "pattern") {
      auto p = parse_pattern(value);
      if (!p) throw ParseError("spec: unknown pattern '" + std::string(value) + "'", voff);
      s.pattern = *p;
    } else if (auto it = ints.find(key); it != ints.end()) {
      if (!parse_number(value, *it->second)) throw ParseError("spec: bad integer for '" + key + "'", voff);
    } else if (auto ct = colors.find(key); ct != colors.end()) {
      if (!parse_rgb(value, *ct->second)) throw ParseError("spec: bad color for '" + key + "'", voff);
    } else {
      throw ParseError("spec: unknown key '" + key + "'", offset);
    }
  });
  const std::size_t expected = ints.size() + colors.size() + 2;
  if (seen.size() != expected) throw ParseError("spec: missing keys", text.size());
  try {
    validate(s);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("spec: ") + e.what(), text.size());
  }
  return s;
}

namespace {

// Reads whitespace/comment separated header tokens of a netpbm file.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : b_(bytes) {}
  int number(const char* what) {
    skip();
    const std::size_t start = pos_;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') ++pos_;
    int v = 0;
    if (start == pos_ || !parse_number(b_.substr(start, pos_ - start), v) || v <= 0) {
      throw ParseError(std::string("netpbm: bad ") + what, start);
    }
    return v;
  }
  void end_header() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) {
      throw ParseError("netpbm: missing whitespace after header", pos_);
    }
    ++pos_;
  }
  std::size_t pos() const { return pos_; }
  void expect_magic(std::string_view magic) {
    if (b_.substr(0, 2) != magic) throw ParseError("netpbm: expected magic " + std::string(magic), 0);
    pos_ = 2;
  }

 private:
  void skip() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_ppm(const Image8& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

Image8 decode_ppm(std::string_view bytes) {
  HeaderReader r(bytes);
  r.expect_magic("P6");
  const int w = r.number("width");
  const int h = r.number("height");
  const std::size_t maxval_at = r.pos();
  if (r.number("maxval") != 255) throw ParseError("ppm: only maxval 255 is supported", maxval_at);
  r.end_header();
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - r.pos() < need) throw ParseError("ppm: truncated pixel data", bytes.size());
  Image8 img;
  img.height = h;
  img.width = w;
  img.rgb.assign(bytes.begin() + static_cast<long>(r.pos()), bytes.begin() + static_cast<long>(r.pos() + need));
  return img;
}

std::string encode_pbm(const Mask& mask) {
  std::string out = "P4\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n";
  const int row = (mask.width + 7) / 8;
  for (int y = 0; y < mask.height; ++y) {
    std::string bytes(static_cast<std::size_t>(row), '\0');
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x)) bytes[static_cast<std::size_t>(x / 8)] |= static_cast<char>(0x80 >> (x % 8));
    }
    out += bytes;
  }
  return out;
}

Mask decode_pbm(std::string_view bytes) {
  HeaderReader r(bytes);
  r.expect_magic("P4");
  const int w = r.number("width");
  const int h = r.number("height");
  r.end_header();
  const std::size_t row = static_cast<std::size_t>((w + 7) / 8);
  if (bytes.size() - r.pos() < row * h) throw ParseError("pbm: truncated bit data", bytes.size());
  Mask m(h, w);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + r.pos());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = (data[static_cast<std::size_t>(y) * row + x / 8] >> (7 - x % 8)) & 1;
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string format_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& base) {
  std::ostringstream o;
  o << "# vton-manifest v1\n# id person garment mask spec seed\n";
  auto rel = [&base](const std::filesystem::path& p) { return p.lexically_relative(base).generic_string(); };
  for (const ManifestEntry& e : entries) {
    o << e.id << ' ' << rel(e.person) << ' ' << rel(e.garment) << ' ' << rel(e.mask) << ' ' << rel(e.spec) << ' ' << e.seed
      << '\n';
  }
  return o.str();
}

std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::filesystem::path& base) {
  std::vector<ManifestEntry> out;
  for_each_line(text, [&](std::string_view line, std::size_t offset) {
    std::vector<std::pair<std::string_view, std::size_t>> fields;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
      if (i > start) fields.emplace_back(line.substr(start, i - start), offset + start);
    }
    if (fields.size() != 6) throw ParseError("manifest: expected 6 fields, got " + std::to_string(fields.size()), offset);
    ManifestEntry e;
    e.id = std::string(fields[0].first);
    e.person = base / std::string(fields[1].first);
    e.garment = base / std::string(fields[2].first);
    e.mask = base / std::string(fields[3].first);
    e.spec = base / std::string(fields[4].first);
    if (!parse_number(fields[5].first, e.seed)) throw ParseError("manifest: bad seed", fields[5].second);
    out.push_back(std::move(e));
  });
  return out;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

void save_sample(const std::filesystem::path& dir, const std::string& id, const SamplePair& pair) {
  write_file(dir / (id + "_person.ppm"), encode_ppm(pair.person));
  write_file(dir / (id + "_garment.ppm"), encode_ppm(pair.garment));
  write_file(dir / (id + "_mask.pbm"), encode_pbm(pair.mask));
  write_file(dir / (id + ".spec"), format_spec(pair.spec));
}

SamplePair load_sample(const ManifestEntry& e) {
  auto wrap = [](const std::filesystem::path& p, const auto& fn) {
    try {
      return fn(read_file(p));
    } catch (const ParseError& err) {
      throw ParseError(p.string() + ": " + err.what(), err.offset());
    }
  };
  SamplePair s;
  s.person = wrap(e.person, [](const std::string& b) { return decode_ppm(b); });
  s.garment = wrap(e.garment, [](const std::string& b) { return decode_ppm(b); });
  s.mask = wrap(e.mask, [](const std::string& b) { return decode_pbm(b); });
  s.spec = wrap(e.spec, [](const std::string& b) { return parse_spec(b); });
  if (s.person.height != s.mask.height || s.person.width != s.mask.width || s.garment.height != s.person.height ||
      s.garment.width != s.person.width) {
    throw std::runtime_error("sample " + e.id + ": image and mask extents differ");
  }
  return s;
}

DatasetManifests plan_dataset(std::uint64_t seed, int n, double split_ratio, const std::filesystem::path& dir) {
  if (n < 2) throw std::invalid_argument("dataset needs at least two samples");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  const int n_train = static_cast<int>(std::floor(n * split_ratio));
  if (n_train < 1 || n - n_train < 2) throw std::invalid_argument("split leaves an empty or single-sample partition");
  DatasetManifests m;
  auto entry = [&](int i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%05d", i);
    ManifestEntry e{id, dir / (std::string(id) + "_person.ppm"), dir / (std::string(id) + "_garment.ppm"),
                    dir / (std::string(id) + "_mask.pbm"), dir / (std::string(id) + ".spec"), mix_seed(seed, static_cast<std::uint64_t>(i))};
    return e;
  };
  for (int i = 0; i < n; ++i) (i < n_train ? m.train : m.test).push_back(entry(i));
  // Sattolo's shuffle yields a single cycle, hence a derangement.
  std::vector<std::size_t> perm(m.test.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(mix_seed(seed, 0xD1CEull));
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i)]);
  for (std::size_t i = 0; i < m.test.size(); ++i) {
    ManifestEntry e = m.test[i];
    const ManifestEntry& other = m.test[perm[i]];
    e.id += "~" + other.id;
    e.garment = other.garment;
    m.test_unpaired.push_back(std::move(e));
  }
  return m;
}

DatasetManifests gen_dataset(std::uint64_t seed, int n, double split_ratio, const std::filesystem::path& dir, int height,
                             int width) {
  DatasetManifests m = plan_dataset(seed, n, split_ratio, dir);
  for (const auto* split : {&m.train, &m.test}) {
    for (const ManifestEntry& e : *split) save_sample(dir, e.id, gen_sample(random_spec(e.seed, height, width)));
  }
  write_file(dir / "train.txt", format_manifest(m.train, dir));
  write_file(dir / "test.txt", format_manifest(m.test, dir));
  write_file(dir / "test_unpaired.txt", format_manifest(m.test_unpaired, dir));
  return m;
}

Tensor to_tensor(const Image8& image) {
  const Index h = image.height, w = image.width;
  Buffer b(3 * h * w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) b[(c * h + y) * w + x] = image.rgb[static_cast<std::size_t>((y * w + x) * 3 + c)] / 127.5 - 1.0;
  return Tensor({3, h, w}, std::move(b));
}

Image8 to_image(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("to_image: expected [3,H,W], got " + to_string(chw.shape()));
  Image8 img(static_cast<int>(chw.dim(1)), static_cast<int>(chw.dim(2)), Rgb{0, 0, 0});
  const Index h = chw.dim(1), w = chw.dim(2);
  const Buffer& v = chw.values();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const double u = std::clamp((v[(c * h + y) * w + x] + 1.0) * 127.5, 0.0, 255.0);
        img.rgb[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<std::uint8_t>(std::lround(u));
      }
  return img;
}

Tensor to_tensor(const Mask& mask) {
  Buffer b(static_cast<Index>(mask.bits.size()));
  for (std::size_t i = 0; i < mask.bits.size(); ++i) b[static_cast<Index>(i)] = mask.bits[i] ? 1.0 : 0.0;
  return Tensor({mask.height, mask.width}, std::move(b));
}

Mask to_mask(const Tensor& hw) {
  if (hw.rank() != 2) throw ShapeError("to_mask: expected [H,W]");
  Mask m(static_cast<int>(hw.dim(0)), static_cast<int>(hw.dim(1)));
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    const double v = hw.values()[static_cast<Index>(i)];
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("to_mask: non-binary value");
    m.bits[i] = v == 1.0 ? 1 : 0;
  }
  return m;
}

}  // namespace vton
