#include "decoder/tokenizer.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace decoder {

namespace {

const std::vector<std::string>& markers() {
  static const std::vector<std::string> m = {"<inst>", "<resp>", "<eos>", "<img>", "<unk>", "<pad>"};
  return m;
}

}  // namespace

Tokenizer Tokenizer::from_words(const std::vector<std::string>& words) {
  Tokenizer t;
  for (const auto& m : markers()) {
    t.token_to_id[m] = static_cast<int>(t.id_to_token.size());
    t.id_to_token.push_back(m);
  }
  for (const auto& w : words) {
    if (w.empty()) throw std::runtime_error("tokenizer: empty word in vocabulary");
    if (t.token_to_id.count(w))
      throw std::runtime_error("tokenizer: duplicate or reserved word '" + w + "'");
    t.token_to_id[w] = static_cast<int>(t.id_to_token.size());
    t.id_to_token.push_back(w);
  }
  return t;
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("tokenizer: cannot open " + path);
  nlohmann::json j;
  f >> j;
  if (!j.is_object()) throw std::runtime_error("tokenizer: vocabulary file must be a JSON object");

  Tokenizer t;
  t.id_to_token.assign(j.size(), "");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || id >= static_cast<int>(j.size()))
      throw std::runtime_error("tokenizer: id " + std::to_string(id) + " out of range in " + path);
    if (!t.id_to_token[static_cast<std::size_t>(id)].empty())
      throw std::runtime_error("tokenizer: duplicate id " + std::to_string(id) + " in " + path);
    t.id_to_token[static_cast<std::size_t>(id)] = it.key();
    t.token_to_id[it.key()] = id;
  }
  for (std::size_t i = 0; i < markers().size(); ++i)
    if (i >= t.id_to_token.size() || t.id_to_token[i] != markers()[i])
      throw std::runtime_error("tokenizer: reserved marker " + markers()[i] + " missing from slot " +
                               std::to_string(i));
  return t;
}

void Tokenizer::save(const std::string& path) const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < id_to_token.size(); ++i) j[id_to_token[i]] = static_cast<int>(i);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("tokenizer: cannot write " + path);
  f << j.dump(2) << '\n';
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  std::istringstream ss(text);
  std::string word;
  while (ss >> word) {
    auto it = token_to_id.find(word);
    ids.push_back(it == token_to_id.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab())
      throw std::runtime_error("tokenizer: id " + std::to_string(ids[i]) + " out of range");
    if (i) out += ' ';
    out += id_to_token[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

int Tokenizer::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  if (it == token_to_id.end()) throw std::runtime_error("tokenizer: unknown token '" + token + "'");
  return it->second;
}

}  // namespace decoder
