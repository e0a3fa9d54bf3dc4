#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "evalkit/evalkit.hpp"

namespace evalkit {

std::vector<std::string> tokenize_lower(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> tokens;
  std::string word;
  while (in >> word) {
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    tokens.push_back(word);
  }
  return tokens;
}

double rouge_l(const std::string& candidate, const std::string& reference) {
  const std::vector<std::string> c = tokenize_lower(candidate);
  const std::vector<std::string> r = tokenize_lower(reference);
  if (c.empty() || r.empty()) return 0.0;

  const std::size_t m = c.size(), n = r.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j)
      cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const int lcs = prev[n];
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(m);
  const double rec = static_cast<double>(lcs) / static_cast<double>(n);
  return 2.0 * p * rec / (p + rec);
}

namespace {

/// "B" -> 1, "(3)" -> 2, "[C]" -> 2, "2." -> 1; uppercase letters only.
/// Returns the option index or nothing when the token is not a label or the
/// index would fall outside the option list.
std::optional<int> parse_label(const std::string& token, int n_options) {
  std::string inner = token;
  if (inner.size() >= 3 && ((inner.front() == '(' && inner.back() == ')') ||
                            (inner.front() == '[' && inner.back() == ']')))
    inner = inner.substr(1, inner.size() - 2);
  else if (inner.size() >= 2 &&
           (inner.back() == '.' || inner.back() == ')' || inner.back() == ':' ||
            inner.back() == ','))
    inner.pop_back();

  int idx = -1;
  if (inner.size() == 1 && inner[0] >= 'A' && inner[0] <= 'Z') {
    idx = inner[0] - 'A';
  } else if (!inner.empty() && inner.size() <= 3 &&
             std::all_of(inner.begin(), inner.end(),
                         [](char ch) { return ch >= '0' && ch <= '9'; })) {
    const int v = std::stoi(inner);
    if (v < 1) return std::nullopt;
    idx = v - 1;
  } else {
    return std::nullopt;
  }
  if (idx >= n_options) return std::nullopt;
  return idx;
}

std::string strip_trailing_punct(std::string word) {
  while (!word.empty() &&
         (word.back() == ':' || word.back() == ',' || word.back() == '.' || word.back() == '!'))
    word.pop_back();
  return word;
}

std::map<std::string, double> tf_idf_vector(const std::vector<std::string>& tokens,
                                            const std::map<std::string, int>& df, int n_docs) {
  std::map<std::string, int> tf;
  for (const std::string& t : tokens) ++tf[t];
  std::map<std::string, double> vec;
  for (const auto& [word, count] : tf) {
    const auto it = df.find(word);
    const int d = it == df.end() ? 0 : it->second;
    vec[word] = count * std::log(static_cast<double>(n_docs) / (d + 1));
  }
  return vec;
}

double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [w, v] : a) {
    na += v * v;
    const auto it = b.find(w);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [w, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

int match_option(const std::string& output, const std::vector<std::string>& options,
                 bool* no_overlap) {
  if (options.size() < 2) throw std::runtime_error("match_option: need at least two options");
  if (no_overlap) *no_overlap = false;
  const int n = static_cast<int>(options.size());

  for (int i = 0; i < n; ++i)
    if (output == options[i]) return i;

  std::istringstream in(output);
  std::vector<std::string> raw;
  std::string word;
  while (in >> word) raw.push_back(word);

  if (raw.size() == 1)
    if (const auto idx = parse_label(raw[0], n)) return *idx;

  for (std::size_t i = 0; i + 1 < raw.size(); ++i) {
    std::string key = strip_trailing_punct(raw[i]);
    for (char& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (key != "option" && key != "answer" && key != "choice") continue;
    std::size_t j = i + 1;
    std::string next = strip_trailing_punct(raw[j]);
    for (char& c : next) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (next == "is" && j + 1 < raw.size()) ++j;
    if (const auto idx = parse_label(raw[j], n)) return *idx;
  }

  if (!raw.empty())
    if (const auto idx = parse_label(raw[0], n)) return *idx;

  // TF-IDF branch: the option list is its own corpus.
  std::map<std::string, int> df;
  std::vector<std::vector<std::string>> opt_tokens;
  opt_tokens.reserve(options.size());
  for (const std::string& opt : options) {
    opt_tokens.push_back(tokenize_lower(opt));
    std::set<std::string> seen(opt_tokens.back().begin(), opt_tokens.back().end());
    for (const std::string& w : seen) ++df[w];
  }
  const auto out_vec = tf_idf_vector(tokenize_lower(output), df, n);

  int best = 0;
  double best_sim = -1.0;
  for (int i = 0; i < n; ++i) {
    const double sim = cosine(out_vec, tf_idf_vector(opt_tokens[static_cast<std::size_t>(i)], df, n));
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  // No token overlap at all: every cosine is exactly zero and the pick is
  // arbitrary, so flag it (the argmax already sits at the lowest index).
  if (best_sim == 0.0 && no_overlap) *no_overlap = true;
  return best;
}

}  // namespace evalkit
