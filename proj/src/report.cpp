#include "unravel/report.hpp"

#include "unravel/csv.hpp"
#include "unravel/dataset_io.hpp"
#include "unravel/error.hpp"
#include "unravel/svg.hpp"

namespace unravel {

nlohmann::json RunManifest::to_json() const {
  return {{"tool_version", tool_version},
          {"configs", configs},
          {"seeds", seeds},
          {"dataset_hashes", dataset_hashes},
          {"artifacts", artifacts}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.tool_version = j.value("tool_version", std::string(kToolVersion));
  m.configs = j.value("configs", nlohmann::json::object());
  m.seeds = j.value("seeds", std::map<std::string, std::uint64_t>{});
  m.dataset_hashes = j.value("dataset_hashes", std::map<std::string, std::uint64_t>{});
  m.artifacts = j.value("artifacts", std::vector<std::string>{});
  return m;
}

CsvTable profile_table(const LossProfile& profile) {
  CsvTable t;
  t.header = {"rank", "id", "perm", "loss"};
  for (std::size_t i = 0; i < profile.entries.size(); ++i) {
    const auto& e = profile.entries[i];
    t.add_row({std::to_string(i + 1), std::to_string(e.id), e.perm.to_string(), format_number(e.loss)});
  }
  return t;
}

RunManifest emit_report(const std::filesystem::path& out_dir, const ReportInputs& in) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) fail(ErrorCode::io, "cannot create " + out_dir.string());
  RunManifest manifest = in.manifest;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text_file(out_dir / name, text);
    manifest.artifacts.push_back(name);
  };

  if (in.profile) {
    emit("loss_profile.csv", profile_table(*in.profile).to_string());
    std::vector<double> ids, losses;
    std::vector<std::size_t> marked;
    for (const auto& e : in.profile->entries) {
      if (in.highlight && e.perm == *in.highlight) marked.push_back(ids.size());
      ids.push_back(e.id);
      losses.push_back(e.loss);
    }
    emit("loss_profile.svg", svg_scatter({"Validation loss per permutation", "permutation id", "validation loss"}, ids,
                                         losses, marked));
  }
  if (!in.rank_curve.empty()) {
    CsvTable t;
    t.header = {"rank", "id", "perm", "loss", "success"};
    Series s{"success", {}, {}};
    for (const auto& p : in.rank_curve) {
      t.add_row({std::to_string(p.rank), std::to_string(p.id), p.perm.to_string(), format_number(p.loss),
                 format_number(p.success)});
      s.x.push_back(static_cast<double>(p.rank));
      s.y.push_back(p.success);
    }
    emit("rank_curve.csv", t.to_string());
    emit("rank_curve.svg", svg_lines({"Retrained success by profile rank", "rank", "success rate"}, {s}));
  }
  if (!in.length_curves.empty()) {
    CsvTable t;
    t.header = {"series", "length", "success"};
    std::vector<Series> series;
    for (const auto& c : in.length_curves) {
      require(c.lengths.size() == c.success.size(), "length curve size mismatch");
      for (std::size_t i = 0; i < c.lengths.size(); ++i) {
        t.add_row({c.name, format_number(c.lengths[i]), format_number(c.success[i])});
      }
      series.push_back({c.name, c.lengths, c.success});
    }
    emit("success_vs_length.csv", t.to_string());
    emit("success_vs_length.svg", svg_lines({"Success rate by target length", "target length", "success rate"}, series));
  }
  if (in.digit_grid) {
    const DigitGrid& g = *in.digit_grid;
    CsvTable t;
    t.header = {"digits_a", "digits_b", "success"};
    for (int i = 1; i <= g.max_digits; ++i) {
      for (int j = 1; j <= g.max_digits; ++j) {
        t.add_row({std::to_string(i), std::to_string(j), format_number(g.at(i, j))});
      }
    }
    emit("digit_grid.csv", t.to_string());
    emit("digit_grid.svg",
         svg_heatmap({"Success by operand digits", "digits of b", "digits of a"}, g.max_digits, g.max_digits, g.success));
  }
  if (!in.sparsity.empty()) {
    CsvTable t;
    t.header = {"name", "layer", "head", "sparsity", "rows"};
    for (const auto& [name, st] : in.sparsity) {
      for (int l = 0; l < st.layers; ++l) {
        for (int h = 0; h < st.heads; ++h) {
          t.add_row({name, std::to_string(l), std::to_string(h),
                     format_number(st.per_head[static_cast<std::size_t>(l * st.heads + h)]), std::to_string(st.rows)});
        }
      }
      t.add_row({name, "all", "all", format_number(st.aggregate), std::to_string(st.rows)});
    }
    emit("sparsity.csv", t.to_string());
  }
  if (!in.success.empty()) {
    CsvTable t;
    t.header = {"name", "success", "passes", "total"};
    for (const auto& s : in.success) {
      t.add_row({s.name, format_number(s.success), std::to_string(s.passes), std::to_string(s.total)});
    }
    emit("success.csv", t.to_string());
  }
  if (in.trace) emit("search_trace.json", in.trace->to_json().dump(2) + "\n");

  write_text_file(out_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

}  // namespace unravel
