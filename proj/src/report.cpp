#include <cstdio>
#include <fstream>
#include <sstream>

#include "cfstab/errors.hpp"
#include "cfstab/harness.hpp"
#include "cfstab/model_io.hpp"

namespace cfstab {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

std::string report_csv(const InvalidationReport& report) {
  std::ostringstream out;
  out << "method,ensemble,succeeded,success_rate,iv_mean,iv_std,cost_l1_mean,cost_l1_std,cost_l2_mean,"
         "cost_l2_std\n";
  for (const auto& m : report.methods) {
    for (const auto& kind : report.ensemble_kinds) {
      const auto it = m.iv.find(kind);
      const IvStats iv = it == m.iv.end() ? IvStats{} : it->second;
      out << m.method << ',' << kind << ',' << m.succeeded << ',' << exact(m.success_rate) << ','
          << exact(iv.mean) << ',' << exact(iv.std) << ',' << exact(m.cost_l1_mean) << ','
          << exact(m.cost_l1_std) << ',' << exact(m.cost_l2_mean) << ',' << exact(m.cost_l2_std) << '\n';
    }
  }
  return out.str();
}

std::string report_text_table(const InvalidationReport& report) {
  std::vector<std::string> header{"Method"};
  for (const auto& kind : report.ensemble_kinds) header.push_back("IV " + kind);
  header.insert(header.end(), {"Cost l1", "Cost l2", "Success"});

  std::vector<std::vector<std::string>> rows;
  for (const auto& m : report.methods) {
    const bool dashed = m.success_rate < report.success_floor;
    std::vector<std::string> row{m.method};
    for (const auto& kind : report.ensemble_kinds) {
      const auto it = m.iv.find(kind);
      row.push_back(dashed || it == m.iv.end() ? "-" : fixed(it->second.mean, 3));
    }
    row.push_back(dashed ? "-" : fixed(m.cost_l1_mean, 3));
    row.push_back(dashed ? "-" : fixed(m.cost_l2_mean, 3));
    row.push_back(fixed(m.success_rate, 2));
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << (c ? "  " : "") << (c + 1 < row.size() ? pad(row[c], width[c]) : row[c]);
    }
    out << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : rows) emit(row);
  out << '\n' << "Origins: " << report.origin_count << '\n';
  if (report.regression_ok) {
    out << "IV - Cost R^2: " << fixed(report.regression.r_squared, 3) << " (slope "
        << fixed(report.regression.slope, 4) << ", " << report.regression.points << " points)\n";
  } else {
    out << "IV - Cost R^2: - (" << report.regression_error << ")\n";
  }
  out << "Cells are '-' when success rate < " << fixed(report.success_floor, 2) << '\n';
  return out.str();
}

void report_emit(const InvalidationReport& report, const std::vector<std::string>& formats,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& f : formats) {
    if (f == "json") {
      write_json_file(report_to_json(report), dir / "report.json");
    } else if (f == "csv") {
      write_text(report_csv(report), dir / "report.csv");
    } else if (f == "text") {
      write_text(report_text_table(report), dir / "report.txt");
    } else {
      throw ConfigError("unknown report format: " + f);
    }
  }
}

}  // namespace cfstab
