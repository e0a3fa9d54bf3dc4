#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "evalkit/evalkit.hpp"
#include "json.hpp"
#include "numkit/rng.hpp"

namespace evalkit {

int EvalRecord::image_count() const {
  int n = 0;
  for (const EvalSegment& s : segments) n += s.is_image ? 1 : 0;
  return n;
}

void validate_record(const EvalRecord& rec) {
  if (rec.is_choice()) {
    if (rec.options.size() < 2)
      throw std::runtime_error("validate_record: choice task '" + rec.task_id +
                               "' needs at least two options");
    if (rec.gold_index < 0 || rec.gold_index >= static_cast<int>(rec.options.size()))
      throw std::runtime_error("validate_record: gold index " + std::to_string(rec.gold_index) +
                               " outside the " + std::to_string(rec.options.size()) +
                               " options of task '" + rec.task_id + "'");
  } else if (rec.gold_index != -1) {
    throw std::runtime_error("validate_record: open-ended task '" + rec.task_id +
                             "' carries a gold index but no options");
  }
  for (const EvalSegment& s : rec.segments)
    if (s.is_image && s.image_ref.empty())
      throw std::runtime_error("validate_record: empty image ref in task '" + rec.task_id + "'");
}

namespace {

struct GroupAccum {
  std::string task_id, category, metric;
  int n = 0;
  double sum = 0.0;
};

/// Accumulates in first-appearance order under a caller-chosen key.
void accumulate(std::vector<GroupAccum>& groups, const std::string& key_task,
                const std::string& category, const std::string& metric, double score) {
  for (GroupAccum& g : groups)
    if (g.task_id == key_task && g.category == category && g.metric == metric) {
      ++g.n;
      g.sum += score;
      return;
    }
  groups.push_back({key_task, category, metric, 1, score});
}

std::vector<GroupScore> finish(const std::vector<GroupAccum>& groups) {
  std::vector<GroupScore> out;
  out.reserve(groups.size());
  for (const GroupAccum& g : groups)
    out.push_back({g.task_id, g.category, g.metric, g.n, g.sum / g.n});
  return out;
}

}  // namespace

EvalReport evaluate(const GenerateFn& model, const std::vector<EvalRecord>& records) {
  EvalReport report;
  std::vector<GroupAccum> tasks, categories;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const EvalRecord& rec = records[i];
    validate_record(rec);

    std::vector<scenegen::Raster> images;
    bool readable = true;
    for (const EvalSegment& s : rec.segments) {
      if (!s.is_image) continue;
      try {
        images.push_back(scenegen::read_ppm(s.image_ref));
      } catch (const std::runtime_error&) {
        readable = false;
        break;
      }
    }
    if (!readable) {
      ++report.skipped;
      continue;
    }

    const std::string output = model(rec, images);
    RecordScore rs;
    rs.record_index = static_cast<int>(i);
    rs.task_id = rec.task_id;
    rs.category = rec.category;
    if (rec.is_choice()) {
      rs.metric = "accuracy";
      rs.score = match_option(output, rec.options) == rec.gold_index ? 1.0 : 0.0;
    } else {
      rs.metric = "rouge_l";
      rs.score = rouge_l(output, rec.response);
    }
    report.per_record.push_back(rs);
    accumulate(tasks, rec.task_id, rec.category, rs.metric, rs.score);
    accumulate(categories, "*", rec.category, rs.metric, rs.score);
  }
  report.per_task = finish(tasks);
  report.per_category = finish(categories);
  return report;
}

EvalRecord permute_images(const EvalRecord& rec, const std::vector<int>& perm) {
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < rec.segments.size(); ++i)
    if (rec.segments[i].is_image) slots.push_back(i);
  if (perm.size() != slots.size())
    throw std::runtime_error("permute_images: permutation of " + std::to_string(perm.size()) +
                             " over " + std::to_string(slots.size()) + " images");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= static_cast<int>(perm.size()) || seen[static_cast<std::size_t>(p)])
      throw std::runtime_error("permute_images: not a permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  EvalRecord out = rec;
  for (std::size_t j = 0; j < slots.size(); ++j)
    out.segments[slots[j]].image_ref =
        rec.segments[slots[static_cast<std::size_t>(perm[j])]].image_ref;
  return out;
}

ShuffleReport shuffle_probe(const GenerateFn& model, const std::vector<EvalRecord>& records,
                            std::uint64_t seed) {
  ShuffleReport report;
  std::vector<EvalRecord> eligible;
  for (const EvalRecord& rec : records) {
    if (rec.image_count() >= 2)
      eligible.push_back(rec);
    else
      ++report.skipped_records;
  }

  const numkit::Rng base(seed);
  std::vector<EvalRecord> shuffled;
  shuffled.reserve(eligible.size());
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    numkit::Rng rng = base.fork(i);
    std::vector<int> perm(static_cast<std::size_t>(eligible[i].image_count()));
    for (std::size_t j = 0; j < perm.size(); ++j) perm[j] = static_cast<int>(j);
    for (int j = static_cast<int>(perm.size()) - 1; j > 0; --j)
      std::swap(perm[static_cast<std::size_t>(j)],
                perm[static_cast<std::size_t>(rng.uniform_int(0, j))]);
    shuffled.push_back(permute_images(eligible[i], perm));
  }

  report.original = evaluate(model, eligible);
  report.shuffled = evaluate(model, shuffled);
  for (const GroupScore& orig : report.original.per_task)
    for (const GroupScore& shuf : report.shuffled.per_task)
      if (orig.task_id == shuf.task_id && orig.metric == shuf.metric) {
        ShuffleDelta d;
        d.task_id = orig.task_id;
        d.category = orig.category;
        d.metric = orig.metric;
        d.n = orig.n;
        d.original = orig.score;
        d.shuffled = shuf.score;
        d.delta = shuf.score - orig.score;
        report.deltas.push_back(d);
      }
  return report;
}

// --- disk formats ---

std::vector<EvalRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_records: cannot read " + path);
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();

  std::vector<EvalRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EvalRecord rec;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      rec.task_id = j.at("task_id").get<std::string>();
      rec.category = j.at("category").get<std::string>();
      rec.task_instruction = j.at("task_instruction").get<std::string>();
      for (const nlohmann::json& seg : j.at("segments")) {
        EvalSegment s;
        if (seg.contains("t")) {
          s.text = seg.at("t").get<std::string>();
        } else if (seg.contains("img")) {
          s.is_image = true;
          const std::filesystem::path ref(seg.at("img").get<std::string>());
          s.image_ref = ref.is_absolute() ? ref.string() : (dir / ref).string();
        } else {
          throw std::runtime_error("segment without 't' or 'img'");
        }
        rec.segments.push_back(std::move(s));
      }
      if (j.contains("options")) {
        rec.options = j.at("options").get<std::vector<std::string>>();
        rec.gold_index = j.at("gold_index").get<int>();
      }
      rec.response = j.at("response").get<std::string>();
    } catch (const std::exception& e) {
      throw std::runtime_error("load_records: bad record on line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    validate_record(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

void save_records(const std::string& path, const std::vector<EvalRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_records: cannot write " + path);
  for (const EvalRecord& rec : records) {
    validate_record(rec);
    nlohmann::json j;
    j["task_id"] = rec.task_id;
    j["category"] = rec.category;
    j["task_instruction"] = rec.task_instruction;
    nlohmann::json segs = nlohmann::json::array();
    for (const EvalSegment& s : rec.segments) {
      if (s.is_image)
        segs.push_back({{"img", s.image_ref}});
      else
        segs.push_back({{"t", s.text}});
    }
    j["segments"] = segs;
    if (rec.is_choice()) {
      j["options"] = rec.options;
      j["gold_index"] = rec.gold_index;
    }
    j["response"] = rec.response;
    out << j.dump() << "\n";
  }
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot write " + path);
  out << "task,category,metric,n,score\n" << std::setprecision(17);
  for (const GroupScore& g : report.per_task)
    out << g.task_id << "," << g.category << "," << g.metric << "," << g.n << "," << g.score
        << "\n";
  for (const GroupScore& g : report.per_category)
    out << g.task_id << "," << g.category << "," << g.metric << "," << g.n << "," << g.score
        << "\n";
}

void write_report_svg(const std::string& path, const EvalReport& report) {
  const int bar_h = 18, gap = 6, label_w = 220, plot_w = 400, margin = 10;
  const int n = static_cast<int>(report.per_task.size());
  const int height = margin * 2 + (n > 0 ? n * (bar_h + gap) - gap : bar_h);
  const int width = label_w + plot_w + margin * 2 + 60;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_svg: cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  out << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  int y = margin;
  out << std::fixed << std::setprecision(3);
  for (const GroupScore& g : report.per_task) {
    const double w = g.score * plot_w;
    out << "  <text x=\"" << margin << "\" y=\"" << y + bar_h - 5 << "\" font-size=\"12\">"
        << g.task_id << " (" << g.metric << ")</text>\n";
    out << "  <rect x=\"" << label_w << "\" y=\"" << y << "\" width=\"" << w << "\" height=\""
        << bar_h << "\" fill=\"#4477aa\"/>\n";
    out << "  <text x=\"" << label_w + w + 4 << "\" y=\"" << y + bar_h - 5
        << "\" font-size=\"12\">" << g.score << "</text>\n";
    y += bar_h + gap;
  }
  out << "</svg>\n";
}

}  // namespace evalkit
