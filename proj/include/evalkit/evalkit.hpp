#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scenegen/scenegen.hpp"

namespace evalkit {

// --- records ---

struct EvalSegment {
  bool is_image = false;
  std::string text;       // TEXT segments
  std::string image_ref;  // IMAGE segments: path to a PPM file
};

/// One evaluation instance: an instruction, an ordered text/image sequence,
/// and either a gold free-form response (scored by ROUGE-L) or a closed
/// option list with a gold index (scored by accuracy).
struct EvalRecord {
  std::string task_id;
  std::string category;
  std::string task_instruction;
  std::vector<EvalSegment> segments;
  std::vector<std::string> options;  // empty -> open-ended
  int gold_index = -1;               // choice tasks: index into options
  std::string response;              // gold text

  bool is_choice() const { return !options.empty(); }
  int image_count() const;
};

/// Rejects records whose option list and gold index disagree (choice tasks
/// need >= 2 options and an in-range gold; open-ended tasks need neither).
void validate_record(const EvalRecord& rec);

// --- metrics ---

/// Lowercased whitespace tokens.
std::vector<std::string> tokenize_lower(const std::string& text);

/// Sentence-level ROUGE-L F1: P = LCS/|cand|, R = LCS/|ref|, F1 = 2PR/(P+R).
/// 0 when either side has no tokens.
double rouge_l(const std::string& candidate, const std::string& reference);

/// Maps a free-form output onto an option index. Order of rules:
///   1. exact string equality with an option;
///   2. the whole output is one label token ("B", "2", "(1)", "[C]", "3.");
///   3. "option"/"answer"/"choice" (optionally "is") followed by a label;
///   4. the output starts with a label token;
///   5. otherwise argmax TF-IDF cosine against the option list (tf = raw
///      count, idf = ln(N / (df + 1)) with df over the options), ties to the
///      lowest index.
/// Letter labels must be uppercase (a lone lowercase "a" is an article, not
/// an answer); labels beyond the option count are ignored. When every cosine
/// is zero the lowest index is returned and *no_overlap is set.
int match_option(const std::string& output, const std::vector<std::string>& options,
                 bool* no_overlap = nullptr);

// --- evaluation protocol ---

/// The model under test: receives the record plus its decoded images, in
/// segment order, and returns the output text.
using GenerateFn =
    std::function<std::string(const EvalRecord&, const std::vector<scenegen::Raster>&)>;

struct RecordScore {
  int record_index = 0;
  std::string task_id;
  std::string category;
  std::string metric;  // "accuracy" | "rouge_l"
  double score = 0.0;
};

struct GroupScore {
  std::string task_id;   // "*" on category roll-up rows
  std::string category;
  std::string metric;
  int n = 0;
  double score = 0.0;  // arithmetic mean over the group's records
};

struct EvalReport {
  std::vector<RecordScore> per_record;
  std::vector<GroupScore> per_task;      // first-appearance order
  std::vector<GroupScore> per_category;  // rolled up per (category, metric)
  int skipped = 0;                       // records with unreadable images
};

/// Runs the model over every record: choice tasks score 1/0 accuracy via
/// match_option against the gold index, open-ended tasks score ROUGE-L
/// against the gold response. Records whose images cannot be read are
/// skipped and counted. Pure: identical model + records give identical
/// reports.
EvalReport evaluate(const GenerateFn& model, const std::vector<EvalRecord>& records);

/// Reorders the image segments by `perm` (image j shows what image perm[j]
/// showed); text segments are untouched.
EvalRecord permute_images(const EvalRecord& rec, const std::vector<int>& perm);

struct ShuffleDelta {
  std::string task_id;
  std::string category;
  std::string metric;
  int n = 0;
  double original = 0.0;
  double shuffled = 0.0;
  double delta = 0.0;  // shuffled - original
};

struct ShuffleReport {
  EvalReport original;
  EvalReport shuffled;
  std::vector<ShuffleDelta> deltas;
  int skipped_records = 0;  // fewer than two images: nothing to shuffle
};

/// Order-sensitivity probe: evaluates the eligible records as-is and with
/// each record's images uniformly permuted, then reports the per-task score
/// shift. A model that ignores image order scores a delta of exactly zero.
ShuffleReport shuffle_probe(const GenerateFn& model, const std::vector<EvalRecord>& records,
                            std::uint64_t seed);

// --- disk formats ---

/// JSONL, one record per line; segments as [{"t": ...} | {"img": ...}].
/// Relative image refs are resolved against the file's directory.
std::vector<EvalRecord> load_records(const std::string& path);
void save_records(const std::string& path, const std::vector<EvalRecord>& records);

/// CSV "task,category,metric,n,score": per-task rows, then per-category
/// roll-ups with task = "*".
void write_report_csv(const std::string& path, const EvalReport& report);

/// Self-contained bar chart of the per-task scores.
void write_report_svg(const std::string& path, const EvalReport& report);

}  // namespace evalkit
