#include "takand/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace takand {

namespace {

void normalize_row(std::span<double> row) {
  double n = 0.0;
  for (double x : row) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : row) x /= n;
}

void check_finite(std::span<const double> v, const std::string& what) {
  for (double x : v)
    if (!std::isfinite(x)) throw InputError(what + " contains non-finite values");
}

}  // namespace

EmbeddingTable EmbeddingTable::from_values(std::size_t dim, std::size_t entity_count,
                                           std::vector<double> entity_values,
                                           std::size_t relation_count,
                                           std::vector<double> relation_values) {
  if (entity_values.size() != entity_count * dim || relation_values.size() != relation_count * dim)
    throw std::invalid_argument("embedding table: value count does not match shape");
  check_finite(entity_values, "entity embeddings");
  check_finite(relation_values, "relation embeddings");
  EmbeddingTable t;
  t.dim = dim;
  t.entities = ad::parameter(entity_count, dim, std::move(entity_values), /*track_rows=*/true);
  t.relations = ad::parameter(relation_count, dim, std::move(relation_values), true);
  return t;
}

std::span<const double> EmbeddingTable::entity(EntityId e) const {
  return entities.value().subspan(static_cast<std::size_t>(e) * dim, dim);
}

std::span<const double> EmbeddingTable::relation(RelationId r) const {
  return relations.value().subspan(static_cast<std::size_t>(r) * dim, dim);
}

void EmbeddingTable::extend_entities(std::size_t new_count, Rng& rng) {
  const std::size_t old = entity_count();
  if (new_count <= old) return;
  std::vector<double> values = entities.to_vector();
  const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
  auto extra = uniform_values((new_count - old) * dim, bound, rng);
  for (std::size_t r = 0; r < new_count - old; ++r)
    normalize_row(std::span<double>(extra).subspan(r * dim, dim));
  values.insert(values.end(), extra.begin(), extra.end());
  ad::Node* n = entities.node();
  n->value = std::move(values);
  n->rows = new_count;
  n->grad.clear();
  n->touched_rows.clear();
  n->row_mark.clear();
}

double transe_distance(std::span<const double> h, std::span<const double> r,
                       std::span<const double> t) {
  if (h.size() != r.size() || h.size() != t.size())
    throw std::invalid_argument("transe_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = h[i] + r[i] - t[i];
    s += x * x;
  }
  return std::sqrt(s);
}

BilinearParams BilinearParams::full(std::size_t dim, ad::Var weight, ad::Var bias) {
  if (weight.rows() != dim * dim || weight.cols() != dim || bias.rows() != dim || bias.cols() != 1)
    throw std::invalid_argument("bilinear: full-form shapes must be (d*d x d, d x 1)");
  BilinearParams p;
  p.dim = dim;
  p.rank = 0;
  p.weight = std::move(weight);
  p.bias = std::move(bias);
  return p;
}

BilinearParams BilinearParams::create(ParamStore& store, const std::string& prefix,
                                      std::size_t dim, std::size_t rank, Rng& rng) {
  BilinearParams p;
  p.dim = dim;
  p.rank = rank;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  if (rank == 0) {
    p.weight = store.add(prefix + ".weight", dim * dim, dim,
                         uniform_values(dim * dim * dim, bound, rng));
  } else {
    // Scale so U_k V_k^T has entries comparable to the full form.
    const double fb = std::sqrt(bound / std::sqrt(static_cast<double>(rank)));
    p.left = store.add(prefix + ".left", dim * rank, dim, uniform_values(dim * rank * dim, fb, rng));
    p.right = store.add(prefix + ".right", dim * rank, dim, uniform_values(dim * rank * dim, fb, rng));
  }
  p.bias = store.add(prefix + ".bias", dim, 1, std::vector<double>(dim, 0.0));
  return p;
}

ad::Var bilinear_relation(const ad::Var& h, const ad::Var& t, const BilinearParams& p) {
  const std::size_t d = p.dim;
  if (h.rows() != d || t.rows() != d || h.cols() != 1 || t.cols() != 1)
    throw std::invalid_argument("bilinear_relation: expected two d x 1 vectors");
  if (p.rank == 0) {
    // Row k of reshape(W t) is (W_k t)^T, so the product with h gives h^T W_k t.
    ad::Var wt = ad::reshape(ad::matmul(p.weight, t), d, d);
    return ad::add(ad::matmul(wt, h), p.bias);
  }
  ad::Var u = ad::matmul(p.left, h);
  ad::Var v = ad::matmul(p.right, t);
  ad::Var prod = ad::reshape(ad::mul(u, v), d, p.rank);
  return ad::add(ad::row_sum(prod), p.bias);
}

double transe_margin_loss(std::span<const double> entities, std::span<const double> relations,
                          std::size_t dim, std::span<const TranseSample> samples, double margin,
                          std::vector<double>* entity_grad, std::vector<double>* relation_grad) {
  double total = 0.0;
  std::vector<double> u(dim), w(dim);
  for (const auto& s : samples) {
    const auto h = entities.subspan(s.positive.head * dim, dim);
    const auto t = entities.subspan(s.positive.tail * dim, dim);
    const auto h2 = entities.subspan(s.negative.head * dim, dim);
    const auto t2 = entities.subspan(s.negative.tail * dim, dim);
    const auto r = relations.subspan(s.positive.relation * dim, dim);
    double nu = 0.0, nw = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      u[i] = h[i] + r[i] - t[i];
      w[i] = h2[i] + r[i] - t2[i];
      nu += u[i] * u[i];
      nw += w[i] * w[i];
    }
    nu = std::sqrt(nu);
    nw = std::sqrt(nw);
    const double l = margin + nu - nw;
    if (l <= 0.0) continue;
    total += l;
    if (!entity_grad || !relation_grad) continue;
    auto& ge = *entity_grad;
    auto& gr = *relation_grad;
    for (std::size_t i = 0; i < dim; ++i) {
      const double a = nu > 0.0 ? u[i] / nu : 0.0;
      const double b = nw > 0.0 ? w[i] / nw : 0.0;
      ge[s.positive.head * dim + i] += a;
      ge[s.positive.tail * dim + i] -= a;
      ge[s.negative.head * dim + i] -= b;
      ge[s.negative.tail * dim + i] += b;
      gr[s.positive.relation * dim + i] += a - b;
    }
  }
  return total;
}

TranseResult pretrain_transe(const TripleSet& ts, const TranseConfig& cfg, Rng& rng,
                             const std::function<void(std::size_t, const EmbeddingTable&)>& on_epoch) {
  if (ts.triples.empty()) throw InputError("pretrain_transe: empty triple set");
  if (ts.entities.size() < 2) throw InputError("pretrain_transe: need at least two entities");
  if (cfg.dim == 0) throw InputError("pretrain_transe: dim must be positive");
  const std::size_t d = cfg.dim, ne = ts.entities.size(), nr = ts.relations.size();
  const double bound = 6.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> ent = uniform_values(ne * d, bound, rng);
  std::vector<double> rel = uniform_values(nr * d, bound, rng);
  for (std::size_t r = 0; r < nr; ++r) normalize_row(std::span<double>(rel).subspan(r * d, d));

  std::vector<std::size_t> order(ts.triples.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<EntityId> pick_entity(0, static_cast<EntityId>(ne - 1));
  std::bernoulli_distribution coin(0.5);

  TranseResult result;
  std::vector<double> ge(ne * d, 0.0), gr(nr * d, 0.0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t e = 0; e < ne; ++e) normalize_row(std::span<double>(ent).subspan(e * d, d));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const Triple pos = ts.triples[idx];
      Triple neg = pos;
      const bool corrupt_head = coin(rng);
      EntityId& slot = corrupt_head ? neg.head : neg.tail;
      const EntityId original = slot;
      do {
        slot = pick_entity(rng);
      } while (slot == original);

      const TranseSample sample{pos, neg};
      const EntityId touched[4] = {pos.head, pos.tail, neg.head, neg.tail};
      for (EntityId e : touched) std::fill_n(ge.begin() + e * d, d, 0.0);
      std::fill_n(gr.begin() + pos.relation * d, d, 0.0);
      const double l = transe_margin_loss(ent, rel, d, std::span(&sample, 1), cfg.margin, &ge, &gr);
      epoch_loss += l;
      if (l <= 0.0) continue;
      // Entities may repeat among the four slots; apply each row once.
      for (std::size_t k = 0; k < 4; ++k) {
        bool seen = false;
        for (std::size_t j = 0; j < k; ++j) seen = seen || touched[j] == touched[k];
        if (seen) continue;
        for (std::size_t i = 0; i < d; ++i)
          ent[touched[k] * d + i] -= cfg.learning_rate * ge[touched[k] * d + i];
      }
      for (std::size_t i = 0; i < d; ++i)
        rel[pos.relation * d + i] -= cfg.learning_rate * gr[pos.relation * d + i];
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(ts.triples.size()));
    if (on_epoch) {
      auto snapshot = EmbeddingTable::from_values(d, ne, ent, nr, rel);
      on_epoch(epoch, snapshot);
    }
  }
  for (std::size_t e = 0; e < ne; ++e) normalize_row(std::span<double>(ent).subspan(e * d, d));
  result.table = EmbeddingTable::from_values(d, ne, std::move(ent), nr, std::move(rel));
  return result;
}

void export_text_matrix(const std::filesystem::path& path, std::span<const double> values,
                        std::size_t rows, std::size_t cols) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write matrix file: " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "\t" : "") << values[r * cols + c];
    out << '\n';
  }
}

std::vector<double> import_text_matrix(const std::filesystem::path& path, std::size_t& rows,
                                       std::size_t& cols) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open matrix file: " + path.string());
  std::vector<double> values;
  rows = 0;
  cols = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::size_t width = 0;
    double x;
    while (ss >> x) {
      values.push_back(x);
      ++width;
    }
    if (!ss.eof()) throw InputError(path.string() + ":" + std::to_string(line_no) + ": not a number");
    if (width == 0) continue;
    if (rows == 0) cols = width;
    if (width != cols)
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": row width " +
                       std::to_string(width) + " differs from " + std::to_string(cols));
    ++rows;
  }
  return values;
}

EmbeddingTable import_pretrained(const std::filesystem::path& entity_path,
                                 const std::filesystem::path& relation_path,
                                 std::size_t entity_count, std::size_t relation_count,
                                 std::size_t expected_dim) {
  std::size_t er = 0, ec = 0, rr = 0, rc = 0;
  auto ent = import_text_matrix(entity_path, er, ec);
  auto rel = import_text_matrix(relation_path, rr, rc);
  if (expected_dim != 0 && ec != expected_dim)
    throw InputError("dimension mismatch: expected d=" + std::to_string(expected_dim) +
                     ", entity file has width " + std::to_string(ec));
  if (rc != ec)
    throw InputError("dimension mismatch: entity width " + std::to_string(ec) +
                     ", relation width " + std::to_string(rc));
  if (er != entity_count)
    throw InputError("entity file has " + std::to_string(er) + " rows, vocabulary has " +
                     std::to_string(entity_count));
  if (rr != relation_count)
    throw InputError("relation file has " + std::to_string(rr) + " rows, vocabulary has " +
                     std::to_string(relation_count));
  return EmbeddingTable::from_values(ec, er, std::move(ent), rr, std::move(rel));
}

namespace {

void write_doubles(std::ofstream& out, std::span<const double> v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

std::uint64_t embedding_vocab_hash(const Vocab& entities, const Vocab& relations) {
  return entities.hash() ^ (relations.hash() * 0x9E3779B97F4A7C15ull);
}

void save_embeddings(const std::filesystem::path& stem, const EmbeddingTable& table,
                     std::uint64_t vocab_hash) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw InputError("cannot write " + bin.string());
  write_doubles(out, table.entities.value());
  write_doubles(out, table.relations.value());
  nlohmann::json meta{{"dim", table.dim},
                      {"entity_count", table.entity_count()},
                      {"relation_count", table.relation_count()},
                      {"vocab_hash", vocab_hash}};
  std::ofstream js(side);
  if (!js) throw InputError("cannot write " + side.string());
  js << meta.dump(2) << '\n';
}

EmbeddingTable load_embeddings(const std::filesystem::path& stem,
                               std::uint64_t expected_vocab_hash) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  const auto meta = read_json_file(side);
  const auto dim = meta.at("dim").get<std::size_t>();
  const auto ne = meta.at("entity_count").get<std::size_t>();
  const auto nr = meta.at("relation_count").get<std::size_t>();
  if (meta.at("vocab_hash").get<std::uint64_t>() != expected_vocab_hash)
    throw InputError(side.string() + ": vocabulary hash does not match the loaded dataset");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw InputError("cannot open " + bin.string());
  std::vector<double> ent(ne * dim), rel(nr * dim);
  in.read(reinterpret_cast<char*>(ent.data()), static_cast<std::streamsize>(ent.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(rel.data()), static_cast<std::streamsize>(rel.size() * sizeof(double)));
  if (!in) throw InputError(bin.string() + ": truncated embedding file");
  return EmbeddingTable::from_values(dim, ne, std::move(ent), nr, std::move(rel));
}

}  // namespace takand
