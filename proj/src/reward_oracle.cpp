#include "srlab/reward_oracle.hpp"

#include <algorithm>
#include <cmath>

#include "srlab/io.hpp"

namespace srlab {

namespace {

// Lenient UTF-8 decode; malformed bytes map to themselves.
std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    char32_t cp = lead;
    if (lead >= 0xC0 && lead < 0xE0) { extra = 1; cp = lead & 0x1F; }
    else if (lead >= 0xE0 && lead < 0xF0) { extra = 2; cp = lead & 0x0F; }
    else if (lead >= 0xF0 && lead < 0xF8) { extra = 3; cp = lead & 0x07; }
    bool ok = extra > 0 && i + extra < s.size();
    for (std::size_t k = 1; ok && k <= extra; ++k) {
      const auto c = static_cast<unsigned char>(s[i + k]);
      if ((c & 0xC0) != 0x80) ok = false;
      else cp = (cp << 6) | (c & 0x3F);
    }
    if (ok) {
      out.push_back(cp);
      i += extra + 1;
    } else {
      out.push_back(lead);
      ++i;
    }
  }
  return out;
}

}  // namespace

std::size_t edit_distance(std::string_view a_utf8, std::string_view b_utf8) {
  const std::u32string a = decode_utf8(a_utf8);
  const std::u32string b = decode_utf8(b_utf8);
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double edit_similarity(std::string_view a, std::string_view b) {
  const std::size_t la = decode_utf8(a).size();
  const std::size_t lb = decode_utf8(b).size();
  const std::size_t max_len = std::max(la, lb);
  if (max_len == 0) return 1.0;
  return 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(max_len);
}

RewardOracle RewardOracle::table(ResponseSpace space, std::map<std::string, std::vector<double>> rewards,
                                 double r_max) {
  if (!(r_max > 0.0) || !std::isfinite(r_max)) fail(ErrorKind::InvalidArgument, "r_max must be positive");
  for (const auto& [id, row] : rewards) {
    if (row.size() != space.size()) {
      fail(ErrorKind::InvalidArgument, "reward row for prompt '" + id + "' has " + std::to_string(row.size()) +
                                           " entries, response space has " + std::to_string(space.size()));
    }
    for (double v : row) {
      if (!(v >= 0.0 && v <= r_max)) {
        fail(ErrorKind::InvalidArgument, "reward for prompt '" + id + "' outside [0, r_max]");
      }
    }
  }
  RewardOracle o;
  o.kind_ = Kind::Table;
  o.r_max_ = r_max;
  o.space_ = std::make_shared<const ResponseSpace>(std::move(space));
  o.table_ = std::move(rewards);
  return o;
}

RewardOracle RewardOracle::target_match(std::map<std::string, std::string> targets, double r_max,
                                        double sharpness) {
  if (!(r_max > 0.0) || !std::isfinite(r_max)) fail(ErrorKind::InvalidArgument, "r_max must be positive");
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) fail(ErrorKind::InvalidArgument, "sharpness must be positive");
  RewardOracle o;
  o.kind_ = Kind::TargetMatch;
  o.r_max_ = r_max;
  o.sharpness_ = sharpness;
  o.targets_ = std::move(targets);
  return o;
}

double RewardOracle::score(const Prompt& prompt, std::string_view response) const {
  if (kind_ == Kind::Table) {
    auto it = table_.find(prompt.id);
    if (it == table_.end()) fail(ErrorKind::UnknownPrompt, "no rewards for prompt '" + prompt.id + "'");
    return it->second[space_->index_of(response)];
  }
  auto it = targets_.find(prompt.id);
  if (it == targets_.end()) fail(ErrorKind::UnknownPrompt, "no target for prompt '" + prompt.id + "'");
  const double sim = edit_similarity(response, it->second);
  const double shaped = sharpness_ == 1.0 ? sim : std::pow(sim, sharpness_);
  return std::clamp(r_max_ * shaped, 0.0, r_max_);
}

std::vector<double> RewardOracle::batch_score(const Prompt& prompt, std::span<const std::string> responses) const {
  std::vector<double> out;
  out.reserve(responses.size());
  for (const auto& r : responses) out.push_back(score(prompt, r));
  return out;
}

RewardMatrix RewardOracle::matrix(const PromptSet& prompts, const ResponseSpace& space) const {
  RewardMatrix m;
  m.prompts = prompts.size();
  m.responses = space.size();
  m.r_max = r_max_;
  m.values.reserve(m.prompts * m.responses);
  for (const auto& p : prompts) {
    auto row = batch_score(p, space.items());
    m.values.insert(m.values.end(), row.begin(), row.end());
  }
  return m;
}

RewardOracle RewardOracle::load_table(const std::filesystem::path& path, ResponseSpace space, double r_max) {
  try {
    const Json j = Json::parse(read_text_file(path));
    std::map<std::string, std::vector<double>> rewards;
    for (const auto& [pid, entries] : j.items()) {
      std::vector<double> row(space.size(), -1.0);
      for (const auto& [idx, value] : entries.items()) {
        std::size_t i = 0;
        try {
          i = std::stoul(idx);
        } catch (const std::exception&) {
          fail(ErrorKind::ParseError, path.string() + ": response index '" + idx + "' is not an integer");
        }
        if (i >= row.size()) fail(ErrorKind::ParseError, path.string() + ": response index " + idx + " out of range");
        row[i] = value.get<double>();
      }
      if (std::any_of(row.begin(), row.end(), [](double v) { return v < 0.0; })) {
        fail(ErrorKind::ParseError, path.string() + ": prompt '" + pid + "' is missing response rewards");
      }
      rewards.emplace(pid, std::move(row));
    }
    return table(std::move(space), std::move(rewards), r_max);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

RewardOracle RewardOracle::load_targets(const std::filesystem::path& path, double r_max, double sharpness) {
  try {
    const Json j = Json::parse(read_text_file(path));
    return target_match(j.get<std::map<std::string, std::string>>(), r_max, sharpness);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

Json RewardOracle::to_file_json() const {
  Json j = Json::object();
  if (kind_ == Kind::TargetMatch) {
    for (const auto& [pid, target] : targets_) j[pid] = target;
    return j;
  }
  for (const auto& [pid, row] : table_) {
    Json entries = Json::object();
    for (std::size_t i = 0; i < row.size(); ++i) entries[std::to_string(i)] = row[i];
    j[pid] = std::move(entries);
  }
  return j;
}

}  // namespace srlab
