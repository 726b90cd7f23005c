#include "starvae/imaging.hpp"

#include "starvae/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace starvae::imaging {

namespace {

constexpr std::size_t kBlockSize = 2880;
constexpr std::size_t kCardSize = 80;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::string buf(s);
  // FITS allows a Fortran-style 'D' exponent.
  for (auto& c : buf)
    if (c == 'D' || c == 'd') c = 'E';
  if (buf.front() == '+') buf.erase(0, 1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc() || ptr != buf.data() + buf.size()) return std::nullopt;
  return value;
}

std::optional<long long> parse_integer(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

/// Shortest round-trip decimal with a guaranteed '.' and an upper-case exponent.
std::string format_real(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  std::string s(buf.data(), res.ptr);
  const auto epos = s.find('e');
  std::string mantissa = epos == std::string::npos ? s : s.substr(0, epos);
  std::string exponent = epos == std::string::npos ? "" : s.substr(epos + 1);
  if (mantissa.find('.') == std::string::npos) mantissa += ".0";
  if (exponent.empty()) return mantissa;
  return mantissa + "E" + exponent;
}

std::string make_card(std::string_view keyword, std::string_view value) {
  std::string card(keyword);
  card.resize(8, ' ');
  if (!value.empty()) {
    card += "= ";
    if (value.size() < 20) card.append(20 - value.size(), ' ');
    card += value;
  }
  card.resize(kCardSize, ' ');
  return card;
}

/// Value field of a card with any trailing comment removed.
std::string_view card_value(std::string_view card) {
  std::string_view rest = card.substr(10);
  const auto first = rest.find_first_not_of(' ');
  if (first == std::string_view::npos) return {};
  if (rest[first] == '\'') {
    const auto close = rest.find('\'', first + 1);
    return close == std::string_view::npos ? rest.substr(first) : rest.substr(first, close - first + 1);
  }
  const auto slash = rest.find('/');
  return trim(rest.substr(0, slash));
}

void put_be16(std::vector<std::uint8_t>& out, std::int16_t v) {
  const auto u = static_cast<std::uint16_t>(v);
  out.push_back(static_cast<std::uint8_t>(u >> 8));
  out.push_back(static_cast<std::uint8_t>(u & 0xFF));
}

double wrap_signed_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

double wrap_ra(double ra) {
  double r = std::fmod(ra, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r;
}

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

Image::Image(int w, int h, double scale_arcsec)
    : width(w), height(h), data(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0), 0.0),
      pixel_scale_arcsec(scale_arcsec) {}

void Image::validate() const {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidSpec, "image dimensions must be >= 1");
  if (data.size() != static_cast<std::size_t>(width) * height)
    throw Error(ErrorCode::InvalidSpec, "image data length does not match width*height");
  if (!(pixel_scale_arcsec > 0.0) || !std::isfinite(pixel_scale_arcsec))
    throw Error(ErrorCode::InvalidSpec, "pixel scale must be positive");
  for (double v : data)
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidSpec, "image contains non-finite intensities");
}

std::string_view survey_name(Survey survey) {
  return survey == Survey::Ukidss ? "ukidss" : "2mass";
}

Survey parse_survey(std::string_view text) {
  const auto s = lower(trim(text));
  if (s == "ukidss") return Survey::Ukidss;
  if (s == "2mass" || s == "twomass") return Survey::TwoMass;
  throw Error(ErrorCode::BadConfig, "unknown survey '" + std::string(text) + "'");
}

bool passes_survey_filter(Survey survey, int flag) {
  switch (survey) {
    case Survey::Ukidss: return flag == -1 || flag == -2;
    case Survey::TwoMass: return flag >= 1 && flag <= 6;
  }
  return false;
}

int canonical_star_flag(Survey survey) { return survey == Survey::Ukidss ? -1 : 1; }

// ---------------------------------------------------------------- FITS

Image read_fits(std::span<const std::uint8_t> bytes, const FitsReadOptions& options) {
  std::map<std::string, std::string> cards;
  std::size_t offset = 0;
  bool seen_end = false;
  bool first = true;
  while (!seen_end) {
    if (offset + kBlockSize > bytes.size())
      throw Error(ErrorCode::MalformedHeader, "header ends before END card");
    for (std::size_t c = 0; c < kBlockSize / kCardSize; ++c) {
      const std::string_view card(reinterpret_cast<const char*>(bytes.data() + offset + c * kCardSize),
                                  kCardSize);
      const auto keyword = std::string(trim(card.substr(0, 8)));
      if (first) {
        first = false;
        if (keyword != "SIMPLE" || card.substr(8, 2) != "= " || card_value(card) != "T")
          throw Error(ErrorCode::MalformedHeader, "first card must be SIMPLE = T");
      }
      if (keyword == "END") {
        seen_end = true;
        break;
      }
      if (keyword.empty() || card.substr(8, 2) != "= ") continue;
      cards.emplace(keyword, std::string(card_value(card)));
    }
    offset += kBlockSize;
  }

  auto required_int = [&](const char* key) -> long long {
    const auto it = cards.find(key);
    if (it == cards.end()) throw Error(ErrorCode::MalformedHeader, std::string("missing ") + key + " card");
    const auto v = parse_integer(it->second);
    if (!v) throw Error(ErrorCode::MalformedHeader, std::string("unparsable ") + key + " value");
    return *v;
  };
  auto optional_real = [&](const char* key) -> std::optional<double> {
    const auto it = cards.find(key);
    if (it == cards.end()) return std::nullopt;
    const auto v = parse_double(it->second);
    if (!v) throw Error(ErrorCode::MalformedHeader, std::string("unparsable ") + key + " value");
    return v;
  };

  const auto bitpix = required_int("BITPIX");
  const auto naxis = required_int("NAXIS");
  if (bitpix != 16) throw Error(ErrorCode::UnsupportedFormat, "BITPIX=" + std::to_string(bitpix) + ", only 16 is supported");
  if (naxis != 2) throw Error(ErrorCode::UnsupportedFormat, "NAXIS=" + std::to_string(naxis) + ", only 2 is supported");
  const auto naxis1 = required_int("NAXIS1");
  const auto naxis2 = required_int("NAXIS2");
  if (naxis1 < 1 || naxis2 < 1 || naxis1 > std::numeric_limits<int>::max() / std::max<long long>(naxis2, 1))
    throw Error(ErrorCode::UnsupportedFormat, "image axes out of range");

  Image img(static_cast<int>(naxis1), static_cast<int>(naxis2), options.fallback_pixel_scale_arcsec);
  img.scaling.bzero = optional_real("BZERO").value_or(0.0);
  img.scaling.bscale = optional_real("BSCALE").value_or(1.0);

  const auto cdelt1 = optional_real("CDELT1");
  const auto cdelt2 = optional_real("CDELT2");
  if (const auto cd = cdelt2 ? cdelt2 : cdelt1; cd && *cd != 0.0) img.pixel_scale_arcsec = std::abs(*cd) * 3600.0;
  const double scale_deg = img.pixel_scale_arcsec / 3600.0;
  const double crpix1 = optional_real("CRPIX1").value_or(1.0);
  const double crpix2 = optional_real("CRPIX2").value_or(1.0);
  img.origin_sky.dec_deg = optional_real("CRVAL2").value_or(0.0) + (1.0 - crpix2) * scale_deg;
  const double cosd = std::cos(deg2rad(reference_dec_deg(img)));
  img.origin_sky.ra_deg = wrap_ra(optional_real("CRVAL1").value_or(0.0) + (1.0 - crpix1) * scale_deg / cosd);

  const std::size_t n = img.data.size();
  if (bytes.size() < offset + 2 * n)
    throw Error(ErrorCode::TruncatedData, "expected " + std::to_string(2 * n) + " data bytes, found " +
                                              std::to_string(bytes.size() - offset));
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    const auto raw = static_cast<std::int16_t>(static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]));
    img.data[i] = img.scaling.bzero + img.scaling.bscale * raw;
  }
  return img;
}

FitsWriteResult write_fits(const Image& img) {
  FitsWriteResult result;
  auto& out = result.bytes;
  const double scale_deg = img.pixel_scale_arcsec / 3600.0;
  const std::vector<std::string> header = {
      make_card("SIMPLE", "T"),
      make_card("BITPIX", "16"),
      make_card("NAXIS", "2"),
      make_card("NAXIS1", std::to_string(img.width)),
      make_card("NAXIS2", std::to_string(img.height)),
      make_card("BZERO", format_real(img.scaling.bzero)),
      make_card("BSCALE", format_real(img.scaling.bscale)),
      make_card("CRPIX1", format_real(1.0)),
      make_card("CRPIX2", format_real(1.0)),
      make_card("CRVAL1", format_real(img.origin_sky.ra_deg)),
      make_card("CRVAL2", format_real(img.origin_sky.dec_deg)),
      make_card("CDELT1", format_real(scale_deg)),
      make_card("CDELT2", format_real(scale_deg)),
      make_card("END", ""),
  };
  for (const auto& card : header) out.insert(out.end(), card.begin(), card.end());
  out.resize((out.size() + kBlockSize - 1) / kBlockSize * kBlockSize, ' ');

  const std::size_t data_start = out.size();
  out.reserve(data_start + 2 * img.data.size() + kBlockSize);
  for (double v : img.data) {
    const double raw = std::nearbyint((v - img.scaling.bzero) / img.scaling.bscale);
    std::int16_t q = 0;
    if (raw > 32767.0) {
      q = 32767;
      ++result.clipped;
    } else if (raw < -32768.0) {
      q = -32768;
      ++result.clipped;
    } else {
      q = static_cast<std::int16_t>(raw);
    }
    put_be16(out, q);
  }
  out.resize(data_start + (out.size() - data_start + kBlockSize - 1) / kBlockSize * kBlockSize, 0);
  return result;
}

// ----------------------------------------------------------- Catalogue

CatalogueParseResult parse_catalogue(std::string_view text, Survey survey) {
  CatalogueParseResult result;
  enum class Delim { Comma, Tab, Space } delim = Delim::Comma;

  auto split = [&delim](std::string_view line) {
    std::vector<std::string_view> fields;
    if (delim == Delim::Space) {
      std::size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) fields.push_back(line.substr(start, i - start));
      }
      return fields;
    }
    const char sep = delim == Delim::Comma ? ',' : '\t';
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(sep, start);
      fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return fields;
  };

  std::array<int, 4> column{-1, -1, -1, -1};  // ra, dec, mag, flag
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;

    if (!have_header) {
      if (body.find(',') != std::string_view::npos) delim = Delim::Comma;
      else if (body.find('\t') != std::string_view::npos) delim = Delim::Tab;
      else delim = Delim::Space;
      const auto names = split(body);
      constexpr std::array<std::string_view, 4> wanted{"ra", "dec", "mag", "flag"};
      for (std::size_t i = 0; i < names.size(); ++i) {
        const auto name = lower(trim(names[i]));
        for (std::size_t k = 0; k < wanted.size(); ++k)
          if (name == wanted[k] && column[k] < 0) column[k] = static_cast<int>(i);
      }
      for (std::size_t k = 0; k < wanted.size(); ++k)
        if (column[k] < 0) throw Error(ErrorCode::MissingColumn, "catalogue header lacks column '" + std::string(wanted[k]) + "'");
      have_header = true;
      continue;
    }

    const auto fields = split(body);
    const int needed = *std::max_element(column.begin(), column.end());
    if (static_cast<int>(fields.size()) <= needed) {
      result.skipped.push_back({line_no, "too few fields"});
      continue;
    }
    const auto ra = parse_double(fields[column[0]]);
    const auto dec = parse_double(fields[column[1]]);
    const auto mag = parse_double(fields[column[2]]);
    const auto flag = parse_integer(fields[column[3]]);
    if (!ra || !dec || !mag || !flag) {
      result.skipped.push_back({line_no, "unparsable field"});
      continue;
    }
    if (!(*ra >= 0.0 && *ra < 360.0) || !(*dec >= -90.0 && *dec <= 90.0) || !std::isfinite(*mag)) {
      result.skipped.push_back({line_no, "coordinates out of range"});
      continue;
    }
    if (!passes_survey_filter(survey, static_cast<int>(*flag))) {
      ++result.filtered;
      continue;
    }
    result.catalogue.sources.push_back({*ra, *dec, *mag, static_cast<int>(*flag)});
  }
  if (!have_header) throw Error(ErrorCode::MissingColumn, "catalogue has no header row");
  return result;
}

Catalogue filter_catalogue(const Catalogue& catalogue, Survey survey) {
  Catalogue out;
  for (const auto& s : catalogue.sources)
    if (passes_survey_filter(survey, s.class_flag)) out.sources.push_back(s);
  return out;
}

std::string write_catalogue(const Catalogue& catalogue) {
  std::string out = "ra,dec,mag,flag\n";
  std::array<char, 64> buf{};
  auto put = [&](double v) {
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.append(buf.data(), res.ptr);
  };
  for (const auto& s : catalogue.sources) {
    put(s.ra_deg);
    out += ',';
    put(s.dec_deg);
    out += ',';
    put(s.mag);
    out += ',';
    out += std::to_string(s.class_flag);
    out += '\n';
  }
  return out;
}

// --------------------------------------------------------- Coordinates

double reference_dec_deg(const Image& img) {
  return img.origin_sky.dec_deg + 0.5 * (img.height - 1) * img.pixel_scale_arcsec / 3600.0;
}

PixelCoord sky_to_pixel(const Image& img, double ra_deg, double dec_deg) {
  const double scale_deg = img.pixel_scale_arcsec / 3600.0;
  const double cosd = std::cos(deg2rad(reference_dec_deg(img)));
  const double dra = wrap_signed_degrees(ra_deg - img.origin_sky.ra_deg);
  return {dra * cosd / scale_deg, (dec_deg - img.origin_sky.dec_deg) / scale_deg};
}

SkyCoord pixel_to_sky(const Image& img, double x, double y) {
  const double scale_deg = img.pixel_scale_arcsec / 3600.0;
  const double cosd = std::cos(deg2rad(reference_dec_deg(img)));
  return {wrap_ra(img.origin_sky.ra_deg + x * scale_deg / cosd), img.origin_sky.dec_deg + y * scale_deg};
}

}  // namespace starvae::imaging
