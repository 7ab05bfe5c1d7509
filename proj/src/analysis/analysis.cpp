#include "agadapt/analysis/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "agadapt/error.hpp"

namespace agadapt {

const char* pattern_name(Pattern p) {
  switch (p) {
    case Pattern::self: return "self";
    case Pattern::neighboring: return "neighboring";
    case Pattern::special_token: return "special-token";
    case Pattern::lid_token: return "lid-token";
    case Pattern::other: return "other";
  }
  return "?";
}

PatternLabel classify_head_pattern(const Tensor& attn, const TokenSequence& y, const Vocabulary& vocab) {
  PatternLabel out;
  const std::size_t n = attn.rows();
  if (n < 2) return out;
  if (attn.cols() != y.size()) throw DataError("pattern classification: map and sequence lengths differ");
  std::vector<bool> special(y.size(), false);
  std::vector<bool> lid(y.size(), false);
  const int special_ids[] = {vocab.id(tok::sot), vocab.id(tok::trans), vocab.id(tok::nots), vocab.id(tok::eot),
                             vocab.id(tok::blnk)};
  for (std::size_t j = 0; j < y.size(); ++j) {
    for (int s : special_ids) special[j] = special[j] || y.ids[j] == s;
  }
  for (auto p : y.lid_positions) lid[p] = true;

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < attn.cols(); ++j) {
      const double v = attn(i, j);
      total += v;
      Pattern p = Pattern::other;
      if (i == j) {
        p = Pattern::self;
      } else if (i + 1 == j || j + 1 == i) {
        p = Pattern::neighboring;
      } else if (special[j]) {
        p = Pattern::special_token;
      } else if (lid[j]) {
        p = Pattern::lid_token;
      }
      out.scores[static_cast<std::size_t>(p)] += v;
    }
  }
  if (total > 0.0) {
    for (auto& s : out.scores) s /= total;
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < kPatternCount; ++k) {
    if (out.scores[k] > out.scores[best]) best = k;
  }
  out.label = static_cast<Pattern>(best);
  return out;
}

HeatmapFormat heatmap_format_from_name(const std::string& s) {
  if (s == "csv") return HeatmapFormat::csv;
  if (s == "pgm") return HeatmapFormat::pgm;
  throw ConfigError("unknown heatmap format '" + s + "' (expected csv or pgm)");
}

void export_heatmap(const Tensor& attn, const std::vector<std::string>& tokens, const std::filesystem::path& path,
                    HeatmapFormat format) {
  const std::size_t n = attn.rows();
  if (attn.cols() != n) throw DataError("heatmap export needs a square map");
  if (format == HeatmapFormat::csv && tokens.size() != n) throw DataError("heatmap export: token count differs from map");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write heatmap " + path.string());
  char buf[32];
  if (format == HeatmapFormat::csv) {
    os << "query";
    for (const auto& t : tokens) os << ',' << t;
    os << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      os << tokens[i];
      for (std::size_t j = 0; j < n; ++j) {
        std::snprintf(buf, sizeof buf, ",%.6f", attn(i, j));
        os << buf;
      }
      os << '\n';
    }
  } else {
    os << "P2\n" << n << ' ' << n << "\n255\n";
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double v = attn(i, j);
        if (!(v >= 0.0 && v <= 1.0)) throw NumericError("heatmap value outside [0, 1]");
        os << (j ? " " : "") << std::lround(255.0 * v);
      }
      os << '\n';
    }
  }
  if (!os) throw DataError("failed writing heatmap " + path.string());
}

HeatmapCsv read_heatmap_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read heatmap " + path.string());
  HeatmapCsv out;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::istringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) parts.push_back(cell);
    return parts;
  };
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty heatmap");
  auto header = split(line);
  if (header.empty() || header[0] != "query") throw DataError(path.string() + ": bad heatmap header");
  out.tokens.assign(header.begin() + 1, header.end());
  const std::size_t n = out.tokens.size();
  if (n == 0) throw DataError(path.string() + ": heatmap has no columns");
  out.values = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw DataError(path.string() + ": missing heatmap row");
    auto cells = split(line);
    if (cells.size() != n + 1) throw DataError(path.string() + ": ragged heatmap row");
    for (std::size_t j = 0; j < n; ++j) out.values(i, j) = std::stod(cells[j + 1]);
  }
  return out;
}

}  // namespace agadapt
