#include "recforget/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace recforget {

IdMap::IdMap(std::vector<std::string> sorted_ids) : external_(std::move(sorted_ids)) {
  dense_.reserve(external_.size());
  for (int i = 0; i < size(); ++i) dense_.emplace(external_[i], i);
}

int IdMap::dense(const std::string& id) const {
  auto it = dense_.find(id);
  return it == dense_.end() ? -1 : it->second;
}

namespace {

template <typename T>
bool parse_int(std::string_view field, T& out) {
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

// Numeric ids sort numerically and before non-numeric ones.
bool id_less(const std::string& a, const std::string& b) {
  long long va = 0, vb = 0;
  const bool na = !a.empty() && parse_int(a, va);
  const bool nb = !b.empty() && parse_int(b, vb);
  if (na != nb) return na;
  if (na && va != vb) return va < vb;
  return a < b;
}

}  // namespace

std::vector<RawRating> parse_ratings(const std::string& text) {
  std::vector<RawRating> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    std::string_view fields[4];
    std::size_t start = 0;
    int n = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      if (n == 4) throw ParseError(line_no, "expected 4 tab-separated fields, found more");
      fields[n++] = line.substr(start, tab == std::string_view::npos ? line.npos : tab - start);
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (n != 4) {
      throw ParseError(line_no, "expected 4 tab-separated fields, found " + std::to_string(n));
    }
    RawRating r;
    r.user = std::string(fields[0]);
    r.item = std::string(fields[1]);
    if (r.user.empty() || r.item.empty()) throw ParseError(line_no, "empty user or item id");
    if (!parse_int(fields[2], r.rating) || r.rating < 1 || r.rating > 5) {
      throw ParseError(line_no, "rating must be an integer in 1..5");
    }
    if (!parse_int(fields[3], r.timestamp)) throw ParseError(line_no, "malformed timestamp");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawRating> load_ratings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open ratings file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading ratings file " + path.string());
  return parse_ratings(buf.str());
}

InteractionSet preprocess(std::span<const RawRating> raw, int min_interactions) {
  if (raw.empty()) throw EmptyDatasetError("no ratings to preprocess");

  // Provisional ids in first-seen order; re-indexed after filtering.
  std::unordered_map<std::string, int> uid, iid;
  std::vector<std::string> unames, inames;
  std::vector<Interaction> pairs;
  pairs.reserve(raw.size());
  for (const auto& r : raw) {
    auto [ui, u_new] = uid.try_emplace(r.user, static_cast<int>(unames.size()));
    if (u_new) unames.push_back(r.user);
    auto [ii, i_new] = iid.try_emplace(r.item, static_cast<int>(inames.size()));
    if (i_new) inames.push_back(r.item);
    pairs.push_back({ui->second, ii->second});
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  // Iterate the degree filter to a fixpoint.
  while (true) {
    std::vector<int> ucount(unames.size(), 0), icount(inames.size(), 0);
    for (const auto& p : pairs) {
      ++ucount[p.user];
      ++icount[p.item];
    }
    const auto before = pairs.size();
    std::erase_if(pairs, [&](const Interaction& p) {
      return ucount[p.user] < min_interactions || icount[p.item] < min_interactions;
    });
    if (pairs.size() == before) break;
  }
  if (pairs.empty()) throw EmptyDatasetError("every interaction was filtered out");

  auto reindex = [](const std::vector<std::string>& names, std::vector<char> used) {
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (used[i]) kept.push_back(names[i]);
    std::sort(kept.begin(), kept.end(), id_less);
    return kept;
  };
  std::vector<char> uused(unames.size(), 0), iused(inames.size(), 0);
  for (const auto& p : pairs) {
    uused[p.user] = 1;
    iused[p.item] = 1;
  }
  auto maps = std::make_shared<IdMaps>();
  maps->users = IdMap(reindex(unames, uused));
  maps->items = IdMap(reindex(inames, iused));

  InteractionSet out;
  out.num_users = maps->users.size();
  out.num_items = maps->items.size();
  out.interactions.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.interactions.push_back({maps->users.dense(unames[p.user]), maps->items.dense(inames[p.item])});
  }
  std::sort(out.interactions.begin(), out.interactions.end());
  out.ids = std::move(maps);
  return out;
}

SplitBundle split(const InteractionSet& ds, double train_fraction, double valid_fraction,
                  std::uint64_t seed) {
  const double test_fraction = 1.0 - train_fraction - valid_fraction;
  if (train_fraction < 0 || valid_fraction < 0 || test_fraction < -1e-12) {
    throw InvalidArgument("split fractions must be non-negative and sum to 1");
  }
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  const auto n_valid = std::min(n - n_train,
                                static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(n))));

  SplitBundle out;
  out.seed = seed;
  for (InteractionSet* part : {&out.train, &out.valid, &out.test}) {
    part->num_users = ds.num_users;
    part->num_items = ds.num_items;
    part->ids = ds.ids;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& x = ds.interactions[order[k]];
    if (k < n_train) {
      out.train.interactions.push_back(x);
    } else if (k < n_train + n_valid) {
      out.valid.interactions.push_back(x);
    } else {
      out.test.interactions.push_back(x);
    }
  }
  for (InteractionSet* part : {&out.train, &out.valid, &out.test}) {
    std::sort(part->interactions.begin(), part->interactions.end());
  }
  return out;
}

NegativeSampleTable sample_negatives(const InteractionSet& train, int k, std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("negatives per positive must be >= 1");
  const auto positives = items_by_user(train);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, train.num_items - 1);

  NegativeSampleTable table;
  table.seed = seed;
  table.offsets.reserve(train.size() + 1);
  table.offsets.push_back(0);
  table.items.reserve(train.size() * static_cast<std::size_t>(k));

  std::vector<int> drawn;
  std::vector<int> pool;
  for (const auto& x : train.interactions) {
    const auto& pos = positives[x.user];
    const int available = train.num_items - static_cast<int>(pos.size());
    drawn.clear();
    if (available <= 2 * k) {
      // Small remainder: enumerate and take a random prefix.
      pool.clear();
      for (int j = 0; j < train.num_items; ++j)
        if (!std::binary_search(pos.begin(), pos.end(), j)) pool.push_back(j);
      const int take = std::min(k, available);
      for (int t = 0; t < take; ++t) {
        std::uniform_int_distribution<int> d(t, available - 1);
        std::swap(pool[t], pool[d(rng)]);
        drawn.push_back(pool[t]);
      }
    } else {
      while (static_cast<int>(drawn.size()) < k) {
        const int j = pick(rng);
        if (std::binary_search(pos.begin(), pos.end(), j)) continue;
        if (std::find(drawn.begin(), drawn.end(), j) != drawn.end()) continue;
        drawn.push_back(j);
      }
    }
    table.items.insert(table.items.end(), drawn.begin(), drawn.end());
    table.offsets.push_back(table.items.size());
  }
  return table;
}

std::vector<std::vector<int>> items_by_user(const InteractionSet& set) {
  std::vector<std::vector<int>> out(set.num_users);
  for (const auto& x : set.interactions) out[x.user].push_back(x.item);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

std::vector<int> user_counts(const InteractionSet& set) {
  std::vector<int> out(set.num_users, 0);
  for (const auto& x : set.interactions) ++out[x.user];
  return out;
}

InteractionSet filter_users(const InteractionSet& set, const std::vector<char>& keep_user) {
  InteractionSet out;
  out.num_users = set.num_users;
  out.num_items = set.num_items;
  out.ids = set.ids;
  for (const auto& x : set.interactions)
    if (keep_user[x.user]) out.interactions.push_back(x);
  return out;
}

double sparsity(const InteractionSet& set) {
  const double cells = static_cast<double>(set.num_users) * static_cast<double>(set.num_items);
  return cells == 0 ? 1.0 : 1.0 - static_cast<double>(set.size()) / cells;
}

}  // namespace recforget
