#include "demandforge/programs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace demandforge {

namespace {

constexpr double kProbFloor = 1e-300;

double safe_log(double v) { return std::log(std::max(v, kProbFloor)); }

// -sum p ln p with 0 ln 0 = 0
double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------

void ConvexProgram::block_weights(std::span<const double>, std::span<double> weights) const {
  std::fill(weights.begin(), weights.end(), 1.0);
}

void ConvexProgram::natural_gradient(std::span<const double> x, std::span<double> out) const {
  gradient(x, out);
  std::vector<double> w(blocks_.size());
  block_weights(x, w);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    double wb = std::max(w[b], kProbFloor);
    const auto& blk = blocks_[b];
    for (std::size_t k = 0; k < blk.size; ++k) out[blk.offset + k] /= wb;
  }
}

std::unique_ptr<ConvexProgram> ConvexProgram::smoothed(double) const { return nullptr; }

void ConvexProgram::dump(std::ostream& out) const {
  out << "program " << name() << "\n";
  out << "variables " << dimension_ << "\n";
  out << "blocks " << blocks_.size() << "\n";
  for (const auto& b : blocks_)
    out << "  " << b.label << " : sum of " << b.size << " variables = " << b.mass
        << " (entropy weight " << b.temperature << ")\n";
}

std::vector<double> ConvexProgram::uniform_point() const {
  std::vector<double> x(dimension_, 0.0);
  for (const auto& b : blocks_)
    for (std::size_t k = 0; k < b.size; ++k)
      x[b.offset + k] = b.mass / static_cast<double>(b.size);
  return x;
}

void ConvexProgram::add_block(std::string label, std::size_t size, double mass,
                              double temperature) {
  if (size == 0) throw std::invalid_argument("empty simplex block " + label);
  blocks_.push_back({std::move(label), dimension_, size, mass, temperature});
  dimension_ += size;
}

// ---------------------------------------------------------------------------

MultiMnlProgram::MultiMnlProgram(std::vector<std::vector<double>> utilities, double theta,
                                 std::string name)
    : utilities_(std::move(utilities)), theta_(theta), name_(std::move(name)) {
  if (!(theta_ > 0.0)) throw std::invalid_argument("theta must be positive");
  for (std::size_t h = 0; h < utilities_.size(); ++h)
    add_block("lambda[" + std::to_string(h) + "]", utilities_[h].size(), 1.0, 1.0 / theta_);
}

double MultiMnlProgram::value(std::span<const double> x) const {
  double f = 0.0;
  for (std::size_t h = 0; h < utilities_.size(); ++h) {
    const auto& b = blocks_[h];
    for (std::size_t m = 0; m < b.size; ++m) {
      double p = x[b.offset + m];
      f += utilities_[h][m] * p - xlogx(p) / theta_;
    }
  }
  return f;
}

void MultiMnlProgram::gradient(std::span<const double> x, std::span<double> grad) const {
  for (std::size_t h = 0; h < utilities_.size(); ++h) {
    const auto& b = blocks_[h];
    for (std::size_t m = 0; m < b.size; ++m)
      grad[b.offset + m] = utilities_[h][m] - (safe_log(x[b.offset + m]) + 1.0) / theta_;
  }
}

std::unique_ptr<MultiMnlProgram> build_max_satis_mnl(std::span<const double> utilities,
                                                     double theta) {
  return std::make_unique<MultiMnlProgram>(
      std::vector<std::vector<double>>{{utilities.begin(), utilities.end()}}, theta);
}

// ---------------------------------------------------------------------------

MaxSatisNlProgram::MaxSatisNlProgram(std::vector<double> utilities, double theta, ModeTree tree)
    : utilities_(std::move(utilities)), theta_(theta), tree_(std::move(tree)) {
  tree_.validate();
  if (!(theta_ > 0.0)) throw std::invalid_argument("theta must be positive");
  if (utilities_.size() != tree_.alternative_count())
    throw std::invalid_argument("utilities do not match the mode tree");
  add_block("lambda", utilities_.size(), 1.0, 1.0 / theta_);
}

std::vector<double> MaxSatisNlProgram::nest_totals(std::span<const double> x) const {
  std::vector<double> pb(tree_.nest_count(), 0.0);
  for (std::size_t m = 0; m < x.size(); ++m) pb[tree_.nest_of[m]] += x[m];
  return pb;
}

double MaxSatisNlProgram::value(std::span<const double> x) const {
  auto pb = nest_totals(x);
  double f = 0.0;
  for (std::size_t m = 0; m < x.size(); ++m) {
    double tau = tree_.tau[tree_.nest_of[m]];
    f += utilities_[m] * x[m];
    f -= (tau * xlogx(x[m]) + (1.0 - tau) * x[m] * safe_log(pb[tree_.nest_of[m]])) / theta_;
  }
  return f;
}

void MaxSatisNlProgram::gradient(std::span<const double> x, std::span<double> grad) const {
  auto pb = nest_totals(x);
  for (std::size_t m = 0; m < x.size(); ++m) {
    double tau = tree_.tau[tree_.nest_of[m]];
    grad[m] = utilities_[m] -
              (tau * (safe_log(x[m]) + 1.0) + (1.0 - tau) * (safe_log(pb[tree_.nest_of[m]]) + 1.0)) /
                  theta_;
  }
}

std::unique_ptr<MaxSatisNlProgram> build_max_satis_nl(std::span<const double> utilities,
                                                      double theta, const ModeTree& tree) {
  return std::make_unique<MaxSatisNlProgram>(
      std::vector<double>(utilities.begin(), utilities.end()), theta, tree);
}

// ---------------------------------------------------------------------------

EntropyWeights EntropyWeights::from_parameters(const ModelParameters& p) {
  EntropyWeights w;
  w.dest = 1.0 / p.theta_dest;
  w.nest = 1.0 / p.theta_mode;
  w.route = 1.0 / p.theta_route;
  w.within.resize(p.tau.size());
  for (std::size_t n = 0; n < p.tau.size(); ++n) w.within[n] = p.tau[n] / p.theta_mode;
  return w;
}

double huber(double r, double width) {
  double a = std::abs(r);
  if (a <= width) return 0.5 * r * r / width;
  return a - 0.5 * width;
}

double huber_derivative(double r, double width) {
  if (std::abs(r) <= width) return r / width;
  return r > 0.0 ? 1.0 : -1.0;
}

// ---------------------------------------------------------------------------

HierarchicalProgram::HierarchicalProgram(std::shared_ptr<const ChoiceHierarchy> hierarchy,
                                         std::vector<double> demand, FixedUtilities utilities,
                                         EntropyWeights weights, LinkCountPenalty penalty,
                                         std::string name)
    : hierarchy_(std::move(hierarchy)),
      demand_(std::move(demand)),
      utilities_(std::move(utilities)),
      weights_(std::move(weights)),
      penalty_(std::move(penalty)),
      name_(std::move(name)) {
  if (!hierarchy_) throw std::invalid_argument("null hierarchy");
  const auto& h = *hierarchy_;
  if (demand_.size() != h.origin_count())
    throw std::invalid_argument("demand does not match hierarchy origins");
  for (double o : demand_)
    if (!(o >= 0.0) || !std::isfinite(o)) throw std::invalid_argument("negative origin demand");
  if (utilities_.dest.size() != h.od_count() || utilities_.mode.size() != h.odm_count())
    throw std::invalid_argument("fixed utilities do not match hierarchy");
  if (weights_.within.size() != h.nest_count())
    throw std::invalid_argument("one within-nest weight per nest is required");
  if (!(weights_.dest > 0.0) || !(weights_.nest > 0.0) || !(weights_.route > 0.0))
    throw std::invalid_argument("entropy weights must be positive");
  for (double w : weights_.within)
    if (!(w >= 0.0)) throw std::invalid_argument("within-nest weight must be non-negative");
  if (penalty_.sigma != 0.0) {
    if (penalty_.sigma < 0.0) throw std::invalid_argument("penalty weight must be >= 0");
    if (!(penalty_.huber_width > 0.0)) throw std::invalid_argument("huber width must be > 0");
    if (penalty_.observed.size() != h.link_count())
      throw std::invalid_argument("observed link flows do not match link count");
  }
  for (std::size_t c = 0; c < h.odm_count(); ++c)
    if (h.route_end(c) == h.route_begin(c))
      throw std::invalid_argument("empty route set in hierarchy");

  const std::size_t ni = h.origin_count(), nj = h.destination_count();
  const std::size_t nn = h.nest_count(), nm = h.mode_count();
  const auto& tree = h.tree();
  nest_start_.assign(nn, 0);
  mode_slot_.assign(nm, 0);
  std::size_t slot = 0;
  for (std::size_t n = 0; n < nn; ++n) {
    nest_start_[n] = slot;
    for (std::size_t m : tree.members(n)) mode_slot_[m] = slot++;
  }

  auto ij = [](std::size_t i, std::size_t j) {
    return std::to_string(i) + "," + std::to_string(j);
  };
  for (std::size_t i = 0; i < ni; ++i)
    add_block("lambda[" + std::to_string(i) + "]", nj, 1.0, weights_.dest);
  nest_offset_ = dimension_;
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < nj; ++j) add_block("mu[" + ij(i, j) + "]", nn, 1.0, weights_.nest);
  mode_offset_ = dimension_;
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < nj; ++j)
      for (std::size_t n = 0; n < nn; ++n)
        add_block("kappa[" + ij(i, j) + "," + tree.nest_names.at(n) + "]",
                  tree.members(n).size(), 1.0, weights_.within[n]);
  route_offset_ = dimension_;
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < nj; ++j)
      for (std::size_t m = 0; m < nm; ++m) {
        std::size_t c = h.odm(i, j, m);
        add_block("nu[" + ij(i, j) + "," + h.network().mode_names().at(m) + "]",
                  h.route_end(c) - h.route_begin(c), 1.0, weights_.route);
      }
}

std::size_t HierarchicalProgram::mode_index(std::size_t odm) const {
  std::size_t nm = hierarchy_->mode_count();
  return mode_offset_ + (odm / nm) * nm + mode_slot_[odm % nm];
}

HierarchicalProgram::Masses HierarchicalProgram::masses(std::span<const double> x) const {
  const auto& h = *hierarchy_;
  const auto& tree = h.tree();
  Masses ms;
  ms.od.assign(h.od_count(), 0.0);
  ms.odn.assign(h.od_count() * h.nest_count(), 0.0);
  ms.odm.assign(h.odm_count(), 0.0);
  ms.route.assign(h.route_count(), 0.0);
  ms.flows.assign(h.link_count(), 0.0);
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      std::size_t o = h.od(i, j);
      ms.od[o] = demand_[i] * x[dest_index(o)];
      for (std::size_t n = 0; n < h.nest_count(); ++n) {
        std::size_t on = h.odn(i, j, n);
        ms.odn[on] = ms.od[o] * x[nest_index(on)];
      }
      for (std::size_t m = 0; m < h.mode_count(); ++m) {
        std::size_t c = h.odm(i, j, m);
        ms.odm[c] = ms.odn[h.odn(i, j, tree.nest_of[m])] * x[mode_index(c)];
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r) {
          ms.route[r] = ms.odm[c] * x[route_index(r)];
          for (std::size_t a : h.route(r).links) ms.flows[a] += ms.route[r];
        }
      }
    }
  return ms;
}

std::vector<double> HierarchicalProgram::marginal_link_costs(
    std::span<const double> flows) const {
  std::vector<double> g = hierarchy_->network().link_costs(flows);
  if (penalty_.sigma != 0.0)
    for (std::size_t a = 0; a < g.size(); ++a)
      g[a] += penalty_.sigma *
              huber_derivative(flows[a] - penalty_.observed[a], penalty_.huber_width);
  return g;
}

double HierarchicalProgram::value(std::span<const double> x) const {
  const auto& h = *hierarchy_;
  const auto& tree = h.tree();
  Masses ms = masses(x);
  double f = 0.0;
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      std::size_t o = h.od(i, j);
      f += -weights_.dest * demand_[i] * xlogx(x[dest_index(o)]) + ms.od[o] * utilities_.dest[o];
      for (std::size_t n = 0; n < h.nest_count(); ++n)
        f -= weights_.nest * ms.od[o] * xlogx(x[nest_index(h.odn(i, j, n))]);
      for (std::size_t m = 0; m < h.mode_count(); ++m) {
        std::size_t c = h.odm(i, j, m);
        std::size_t n = tree.nest_of[m];
        f += -weights_.within[n] * ms.odn[h.odn(i, j, n)] * xlogx(x[mode_index(c)]) +
             ms.odm[c] * utilities_.mode[c];
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r) {
          double p = x[route_index(r)];
          if (p > 0.0) f -= weights_.route * ms.odm[c] * p * std::log(p / h.path_size(r));
        }
      }
    }
  f -= h.network().beckmann_value(ms.flows);
  if (penalty_.sigma != 0.0)
    for (std::size_t a = 0; a < ms.flows.size(); ++a)
      f -= penalty_.sigma * huber(ms.flows[a] - penalty_.observed[a], penalty_.huber_width);
  return f;
}

// Computes the per-traveller bracket of every variable (the natural
// gradient); the full gradient multiplies each by the mass entering its block.
void HierarchicalProgram::natural_gradient(std::span<const double> x,
                                           std::span<double> out) const {
  const auto& h = *hierarchy_;
  const auto& tree = h.tree();
  Masses ms = masses(x);
  std::vector<double> mc = marginal_link_costs(ms.flows);
  const std::size_t nn = h.nest_count();
  std::vector<double> u_nest(nn);
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      std::size_t o = h.od(i, j);
      std::fill(u_nest.begin(), u_nest.end(), 0.0);
      for (std::size_t m = 0; m < h.mode_count(); ++m) {
        std::size_t c = h.odm(i, j, m);
        double u_mode = 0.0;
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r) {
          double g = 0.0;
          for (std::size_t a : h.route(r).links) g += mc[a];
          double p = x[route_index(r)];
          double lr = safe_log(p) - std::log(h.path_size(r));
          out[route_index(r)] = -weights_.route * (lr + 1.0) - g;
          u_mode += p * (-weights_.route * lr - g);
        }
        std::size_t n = tree.nest_of[m];
        double pm = x[mode_index(c)];
        double lm = safe_log(pm);
        double v = utilities_.mode[c] + u_mode;
        out[mode_index(c)] = -weights_.within[n] * (lm + 1.0) + v;
        u_nest[n] += pm * (-weights_.within[n] * lm + v);
      }
      double u_od = 0.0;
      for (std::size_t n = 0; n < nn; ++n) {
        std::size_t k = nest_index(h.odn(i, j, n));
        double ln = safe_log(x[k]);
        out[k] = -weights_.nest * (ln + 1.0) + u_nest[n];
        u_od += x[k] * (-weights_.nest * ln + u_nest[n]);
      }
      out[dest_index(o)] =
          -weights_.dest * (safe_log(x[dest_index(o)]) + 1.0) + utilities_.dest[o] + u_od;
    }
}

void HierarchicalProgram::block_weights(std::span<const double> x,
                                        std::span<double> weights) const {
  const auto& h = *hierarchy_;
  Masses ms = masses(x);
  std::size_t b = 0;
  for (std::size_t i = 0; i < h.origin_count(); ++i) weights[b++] = demand_[i];
  for (std::size_t o = 0; o < h.od_count(); ++o) weights[b++] = ms.od[o];
  for (std::size_t on = 0; on < ms.odn.size(); ++on) weights[b++] = ms.odn[on];
  for (std::size_t c = 0; c < h.odm_count(); ++c) weights[b++] = ms.odm[c];
}

void HierarchicalProgram::gradient(std::span<const double> x, std::span<double> grad) const {
  natural_gradient(x, grad);
  std::vector<double> w(blocks_.size());
  block_weights(x, w);
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    for (std::size_t k = 0; k < blocks_[b].size; ++k) grad[blocks_[b].offset + k] *= w[b];
}

HierProbabilities HierarchicalProgram::probabilities(std::span<const double> x) const {
  const auto& h = *hierarchy_;
  HierProbabilities p;
  p.dest.resize(h.od_count());
  p.nest.resize(h.od_count() * h.nest_count());
  p.mode_in_nest.resize(h.odm_count());
  p.route.resize(h.route_count());
  for (std::size_t o = 0; o < h.od_count(); ++o) p.dest[o] = x[dest_index(o)];
  for (std::size_t on = 0; on < p.nest.size(); ++on) p.nest[on] = x[nest_index(on)];
  for (std::size_t c = 0; c < h.odm_count(); ++c) p.mode_in_nest[c] = x[mode_index(c)];
  for (std::size_t r = 0; r < h.route_count(); ++r) p.route[r] = x[route_index(r)];
  return p;
}

std::vector<double> HierarchicalProgram::pack(const HierProbabilities& p) const {
  const auto& h = *hierarchy_;
  std::vector<double> x(dimension_, 0.0);
  for (std::size_t o = 0; o < h.od_count(); ++o) x[dest_index(o)] = p.dest.at(o);
  for (std::size_t on = 0; on < h.od_count() * h.nest_count(); ++on)
    x[nest_index(on)] = p.nest.at(on);
  for (std::size_t c = 0; c < h.odm_count(); ++c) x[mode_index(c)] = p.mode_in_nest.at(c);
  for (std::size_t r = 0; r < h.route_count(); ++r) x[route_index(r)] = p.route.at(r);
  return x;
}

TripTables HierarchicalProgram::trips(std::span<const double> x) const {
  return assemble_trips(*hierarchy_, demand_, probabilities(x));
}

double HierarchicalProgram::destination_entropy(std::span<const double> x) const {
  const auto& h = *hierarchy_;
  double s = 0.0;
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j)
      s -= demand_[i] * xlogx(x[dest_index(h.od(i, j))]);
  return s;
}

double HierarchicalProgram::nest_entropy(std::span<const double> x) const {
  const auto& h = *hierarchy_;
  Masses ms = masses(x);
  double s = 0.0;
  for (std::size_t o = 0; o < h.od_count(); ++o)
    for (std::size_t n = 0; n < h.nest_count(); ++n)
      s -= ms.od[o] * xlogx(x[nest_index(o * h.nest_count() + n)]);
  return s;
}

std::vector<double> HierarchicalProgram::within_nest_entropy(std::span<const double> x) const {
  const auto& h = *hierarchy_;
  Masses ms = masses(x);
  std::vector<double> s(h.nest_count(), 0.0);
  for (std::size_t c = 0; c < h.odm_count(); ++c) {
    std::size_t o = c / h.mode_count();
    std::size_t n = h.tree().nest_of[c % h.mode_count()];
    s[n] -= ms.odn[o * h.nest_count() + n] * xlogx(x[mode_index(c)]);
  }
  return s;
}

std::unique_ptr<ConvexProgram> HierarchicalProgram::smoothed(double factor) const {
  if (!(penalty_.sigma > 0.0)) return nullptr;
  LinkCountPenalty pen = penalty_;
  pen.huber_width *= factor;
  return std::make_unique<HierarchicalProgram>(hierarchy_, demand_, utilities_, weights_,
                                               std::move(pen), name_);
}

void HierarchicalProgram::dump(std::ostream& out) const {
  const auto& h = *hierarchy_;
  out << "program " << name_ << "\n";
  out << "maximize  -" << weights_.dest << " sum O p_j ln p_j - " << weights_.nest
      << " sum T_ij p_M ln p_M";
  for (std::size_t n = 0; n < h.nest_count(); ++n)
    out << " - " << weights_.within[n] << " sum_{" << h.tree().nest_names[n]
        << "} T_ijM p_m ln p_m";
  out << " - " << weights_.route << " sum T_ijm p_r ln(p_r/PS_r)"
      << " + sum T_ij V_ij + sum T_ijm V_ijm - Beckmann(f)";
  if (penalty_.sigma != 0.0)
    out << " - " << penalty_.sigma << " sum huber(f - fbar; " << penalty_.huber_width << ")";
  out << "\n";
  out << "origins " << h.origin_count() << " destinations " << h.destination_count()
      << " nests " << h.nest_count() << " modes " << h.mode_count() << " routes "
      << h.route_count() << " links " << h.link_count() << "\n";
  ConvexProgram::dump(out);
}

// ---------------------------------------------------------------------------

bool ObservationBundle::complete_nest_totals(const ChoiceHierarchy& h) {
  if (!od_nest.empty()) return false;
  od_nest.assign(h.od_count() * h.nest_count(), 0.0);
  for (std::size_t c = 0; c < od_mode.size() && c < h.odm_count(); ++c) {
    std::size_t o = c / h.mode_count();
    od_nest[o * h.nest_count() + h.tree().nest_of[c % h.mode_count()]] += od_mode[c];
  }
  return true;
}

void ObservationBundle::validate(const ChoiceHierarchy& h, double rel_tol) const {
  auto close = [rel_tol](double a, double b) {
    return std::abs(a - b) <= rel_tol * std::max(1.0, std::abs(b));
  };
  if (origin_totals.size() != h.origin_count())
    throw std::invalid_argument("observations: origin totals do not match origins");
  if (od.size() != h.od_count()) throw std::invalid_argument("observations: T_ij size mismatch");
  if (od_nest.size() != h.od_count() * h.nest_count())
    throw std::invalid_argument("observations: T_ijM size mismatch");
  if (od_mode.size() != h.odm_count())
    throw std::invalid_argument("observations: T_ijm size mismatch");
  if (!link_flows.empty() && link_flows.size() != h.link_count())
    throw std::invalid_argument("observations: link flow count mismatch");
  for (double v : origin_totals)
    if (!(v > 0.0)) throw std::invalid_argument("observations: O_i must be positive");
  for (double v : od_mode)
    if (!(v > 0.0)) throw std::invalid_argument("observations: T_ijm must be positive");
  for (double v : link_flows)
    if (!(v >= 0.0)) throw std::invalid_argument("observations: link flow must be non-negative");
  for (std::size_t i = 0; i < h.origin_count(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < h.destination_count(); ++j) s += od[h.od(i, j)];
    if (!close(s, origin_totals[i]))
      throw std::invalid_argument("observations: sum_j T_ij != O_i at origin " +
                                  std::to_string(h.origins()[i]));
  }
  for (std::size_t o = 0; o < h.od_count(); ++o) {
    double s = 0.0;
    for (std::size_t n = 0; n < h.nest_count(); ++n) s += od_nest[o * h.nest_count() + n];
    if (!close(s, od[o]))
      throw std::invalid_argument("observations: sum_M T_ijM != T_ij at od " + std::to_string(o));
    for (std::size_t n = 0; n < h.nest_count(); ++n) {
      double t = 0.0;
      for (std::size_t m : h.tree().members(n)) t += od_mode[o * h.mode_count() + m];
      if (!close(t, od_nest[o * h.nest_count() + n]))
        throw std::invalid_argument("observations: sum_{m in M} T_ijm != T_ijM at od " +
                                    std::to_string(o) + " nest " + h.tree().nest_names[n]);
    }
  }
}

// ---------------------------------------------------------------------------

std::unique_ptr<HierarchicalProgram> build_second_stage(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, std::vector<double> demand,
    const FixedUtilities& utilities, const ModelParameters& params) {
  params.validate(*hierarchy);
  return std::make_unique<HierarchicalProgram>(std::move(hierarchy), std::move(demand), utilities,
                                               EntropyWeights::from_parameters(params),
                                               LinkCountPenalty{}, "SecondStage");
}

std::shared_ptr<const ChoiceHierarchy> make_destination_mode_hierarchy(std::size_t origins,
                                                                       std::size_t destinations,
                                                                       std::size_t modes) {
  std::vector<std::string> names;
  for (std::size_t m = 0; m < modes; ++m) names.push_back("m" + std::to_string(m));
  ModalNetwork net(names, {}, 1.0);
  std::vector<int> o(origins), d(destinations);
  // origins 1..n, destinations n+1..n+m, so zone ids stay distinct
  std::iota(o.begin(), o.end(), 1);
  std::iota(d.begin(), d.end(), static_cast<int>(origins) + 1);
  RouteSet rs;
  for (int i : o)
    for (int j : d)
      for (std::size_t m = 0; m < modes; ++m) {
        RouteChoiceSet cs;
        Route r;
        r.mode = static_cast<int>(m);
        cs.routes.push_back(r);
        cs.path_size.push_back(1.0);
        rs.set(i, j, static_cast<int>(m), std::move(cs));
      }
  return std::make_shared<const ChoiceHierarchy>(std::move(net), o, d,
                                                 ModeTree::single_nest(modes), rs);
}

std::unique_ptr<HierarchicalProgram> build_hier_mnl_variant(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, std::vector<double> demand,
    const FixedUtilities& utilities, double theta_dest, double theta_mode) {
  if (!(theta_dest > 0.0) || !(theta_mode > 0.0))
    throw std::invalid_argument("theta must be positive");
  if (hierarchy->nest_count() != 1)
    throw std::invalid_argument("HierMNLVariant needs a single-nest hierarchy");
  EntropyWeights w;
  w.dest = 1.0 / theta_dest;
  w.nest = 1.0 / theta_mode;
  w.within = {1.0 / theta_mode};
  w.route = 1.0;
  return std::make_unique<HierarchicalProgram>(std::move(hierarchy), std::move(demand), utilities,
                                               w, LinkCountPenalty{}, "HierMNLVariant");
}

HierMnlTripProgram::HierMnlTripProgram(std::size_t origins, std::size_t destinations,
                                       std::size_t modes, std::vector<double> demand,
                                       FixedUtilities utilities, double theta_dest,
                                       double theta_mode)
    : ni_(origins), nj_(destinations), nm_(modes), demand_(std::move(demand)),
      utilities_(std::move(utilities)) {
  if (!(theta_dest > 0.0) || !(theta_mode > 0.0))
    throw std::invalid_argument("theta must be positive");
  if (demand_.size() != ni_ || utilities_.dest.size() != ni_ * nj_ ||
      utilities_.mode.size() != ni_ * nj_ * nm_)
    throw std::invalid_argument("HierMNLVariant2: input sizes do not match");
  dest_coef_ = 1.0 / theta_dest - 1.0 / theta_mode;
  mode_coef_ = 1.0 / theta_mode;
  for (std::size_t i = 0; i < ni_; ++i) {
    if (!(demand_[i] > 0.0)) throw std::invalid_argument("HierMNLVariant2: O_i must be positive");
    add_block("lambda[" + std::to_string(i) + "]", nj_ * nm_, demand_[i], mode_coef_);
  }
}

std::vector<double> HierMnlTripProgram::od_trips(std::span<const double> x) const {
  std::vector<double> t(ni_ * nj_, 0.0);
  for (std::size_t c = 0; c < x.size(); ++c) t[c / nm_] += x[c];
  return t;
}

double HierMnlTripProgram::value(std::span<const double> x) const {
  auto t = od_trips(x);
  double f = 0.0;
  for (std::size_t o = 0; o < t.size(); ++o) f += -dest_coef_ * xlogx(t[o]) + t[o] * utilities_.dest[o];
  for (std::size_t c = 0; c < x.size(); ++c)
    f += -mode_coef_ * xlogx(x[c]) + x[c] * utilities_.mode[c];
  return f;
}

void HierMnlTripProgram::gradient(std::span<const double> x, std::span<double> grad) const {
  auto t = od_trips(x);
  for (std::size_t c = 0; c < x.size(); ++c) {
    std::size_t o = c / nm_;
    grad[c] = -dest_coef_ * (safe_log(t[o]) + 1.0) + utilities_.dest[o] -
              mode_coef_ * (safe_log(x[c]) + 1.0) + utilities_.mode[c];
  }
}

std::unique_ptr<HierMnlTripProgram> build_hier_mnl_variant2(
    std::size_t origins, std::size_t destinations, std::size_t modes, std::vector<double> demand,
    const FixedUtilities& utilities, double theta_dest, double theta_mode) {
  return std::make_unique<HierMnlTripProgram>(origins, destinations, modes, std::move(demand),
                                              utilities, theta_dest, theta_mode);
}

// ---------------------------------------------------------------------------

void CalibrationProgram::dump(std::ostream& out) const {
  out << "calibration " << name() << "\n";
  out << "multipliers " << multipliers_.size() << "\n";
  for (std::size_t k = 0; k < multipliers_.size(); ++k)
    out << "  [" << multipliers_[k].label << "] target " << targets_.at(k)
        << (multipliers_[k].positive ? " (positive)" : "") << "\n";
}

MaxEntropyProgram::MaxEntropyProgram(std::vector<std::size_t> choices,
                                     std::vector<std::vector<std::vector<double>>> attributes,
                                     std::size_t alternatives, double theta, std::size_t reference)
    : choices_(std::move(choices)),
      attributes_(std::move(attributes)),
      alternatives_(alternatives),
      attribute_count_(0),
      reference_(reference),
      theta_(theta) {
  if (choices_.empty()) throw std::invalid_argument("MaxEntropy: empty sample");
  if (choices_.size() != attributes_.size())
    throw std::invalid_argument("MaxEntropy: one attribute table per individual required");
  if (alternatives_ < 2 || reference_ >= alternatives_)
    throw std::invalid_argument("MaxEntropy: bad alternative set");
  if (!(theta_ > 0.0)) throw std::invalid_argument("theta must be positive");
  attribute_count_ = attributes_[0].empty() ? 0 : attributes_[0][0].size();
  for (std::size_t h = 0; h < choices_.size(); ++h) {
    if (choices_[h] >= alternatives_) throw std::invalid_argument("MaxEntropy: bad choice index");
    if (attributes_[h].size() != alternatives_)
      throw std::invalid_argument("MaxEntropy: attribute rows must cover every alternative");
    for (const auto& row : attributes_[h])
      if (row.size() != attribute_count_)
        throw std::invalid_argument("MaxEntropy: ragged attribute table");
  }
  for (std::size_t m = 0; m < alternatives_; ++m) {
    if (m == reference_) continue;
    double n = 0.0;
    for (std::size_t c : choices_) n += c == m ? 1.0 : 0.0;
    multipliers_.push_back({"gamma[" + std::to_string(m) + "]", 0.0, false});
    targets_.push_back(n);
  }
  for (std::size_t k = 0; k < attribute_count_; ++k) {
    double s = 0.0;
    for (std::size_t h = 0; h < choices_.size(); ++h) s += attributes_[h][choices_[h]][k];
    multipliers_.push_back({"alpha[" + std::to_string(k) + "]", 0.0, false});
    targets_.push_back(s);
  }
}

std::vector<double> MaxEntropyProgram::asc(std::span<const double> multipliers) const {
  std::vector<double> g(alternatives_, 0.0);
  std::size_t k = 0;
  for (std::size_t m = 0; m < alternatives_; ++m)
    if (m != reference_) g[m] = multipliers[k++];
  return g;
}

std::vector<double> MaxEntropyProgram::alpha(std::span<const double> multipliers) const {
  return {multipliers.begin() + static_cast<std::ptrdiff_t>(alternatives_ - 1), multipliers.end()};
}

std::unique_ptr<ConvexProgram> MaxEntropyProgram::inner(
    std::span<const double> multipliers) const {
  auto g = asc(multipliers);
  auto a = alpha(multipliers);
  std::vector<std::vector<double>> v(choices_.size(), std::vector<double>(alternatives_));
  for (std::size_t h = 0; h < choices_.size(); ++h)
    for (std::size_t m = 0; m < alternatives_; ++m) {
      double u = g[m];
      for (std::size_t k = 0; k < attribute_count_; ++k) u += a[k] * attributes_[h][m][k];
      v[h][m] = u;
    }
  return std::make_unique<MultiMnlProgram>(std::move(v), theta_, "MaxEntropy");
}

std::vector<double> MaxEntropyProgram::residuals(const ConvexProgram&,
                                                 std::span<const double> x) const {
  std::vector<double> r(targets_.size(), 0.0);
  for (std::size_t h = 0; h < choices_.size(); ++h) {
    std::size_t k = 0;
    for (std::size_t m = 0; m < alternatives_; ++m) {
      double p = x[h * alternatives_ + m];
      if (m != reference_) r[k++] += p;
      for (std::size_t q = 0; q < attribute_count_; ++q)
        r[alternatives_ - 1 + q] += p * attributes_[h][m][q];
    }
  }
  for (std::size_t k = 0; k < r.size(); ++k) r[k] -= targets_[k];
  return r;
}

std::unique_ptr<MaxEntropyProgram> build_max_entropy_mnl(
    std::vector<std::size_t> choices, std::vector<std::vector<std::vector<double>>> attributes,
    std::size_t alternatives, double theta) {
  return std::make_unique<MaxEntropyProgram>(std::move(choices), std::move(attributes),
                                             alternatives, theta);
}

// ---------------------------------------------------------------------------

HierarchicalCalibration::HierarchicalCalibration(
    Kind kind, std::shared_ptr<const ChoiceHierarchy> hierarchy, ObservationBundle observations,
    AttributeTable attributes, double theta_route, LinkCountPenalty penalty,
    std::vector<std::pair<std::size_t, double>> fixed_mode_coefficients)
    : kind_(kind),
      hierarchy_(std::move(hierarchy)),
      observations_(std::move(observations)),
      attributes_(std::move(attributes)),
      theta_route_(theta_route),
      penalty_(std::move(penalty)),
      fixed_mode_(std::move(fixed_mode_coefficients)) {
  if (!hierarchy_) throw std::invalid_argument("null hierarchy");
  const auto& h = *hierarchy_;
  if (kind_ == Kind::FirstStage && !(theta_route_ > 0.0))
    throw std::invalid_argument("theta_route must be positive");
  if (kind_ == Kind::HierMnl) {
    if (h.nest_count() != 1)
      throw std::invalid_argument("HierMNL calibration needs a single-nest hierarchy");
    for (std::size_t c = 0; c < h.odm_count(); ++c)
      if (h.route_end(c) - h.route_begin(c) != 1 || !h.route(h.route_begin(c)).links.empty())
        throw std::invalid_argument("HierMNL calibration takes link-free hierarchies");
  }
  if (observations_.complete_nest_totals(h))
    warnings_.push_back("nest-level observations absent; computed from mode-level totals");
  observations_.validate(h);
  attributes_.validate(h);
  if (penalty_.sigma != 0.0 && penalty_.observed.empty())
    penalty_.observed = observations_.link_flows;
  if (penalty_.sigma != 0.0 && penalty_.observed.size() != h.link_count())
    throw std::invalid_argument("link-count penalty needs observed flows on every link");

  for (const auto& [q, value] : fixed_mode_) {
    if (q >= attributes_.mode_attribute_count)
      throw std::invalid_argument("fixed mode coefficient index out of range");
    (void)value;
  }
  for (std::size_t q = 0; q < attributes_.mode_attribute_count; ++q) {
    bool fixed = std::any_of(fixed_mode_.begin(), fixed_mode_.end(),
                             [q](const auto& f) { return f.first == q; });
    if (!fixed) free_mode_attrs_.push_back(q);
  }
  if (kind_ == Kind::FirstStage)
    for (std::size_t n = 0; n < h.nest_count(); ++n)
      if (h.tree().members(n).size() > 1) free_nests_.push_back(n);

  const auto& obs = observations_;
  const std::size_t nn = h.nest_count(), nm = h.mode_count();
  double hd = 0.0, hn = 0.0, hm = 0.0;
  std::vector<double> hw(nn, 0.0);
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      std::size_t o = h.od(i, j);
      hd -= obs.od[o] * std::log(obs.od[o] / obs.origin_totals[i]);
      for (std::size_t n = 0; n < nn; ++n) {
        double t = obs.od_nest[o * nn + n];
        hn -= t * std::log(t / obs.od[o]);
      }
      for (std::size_t m = 0; m < nm; ++m) {
        double t = obs.od_mode[o * nm + m];
        std::size_t n = h.tree().nest_of[m];
        hm -= t * std::log(t / obs.od[o]);
        hw[n] -= t * std::log(t / obs.od_nest[o * nn + n]);
      }
    }

  multipliers_.push_back({"1/theta_j", 1.0, true});
  targets_.push_back(hd);
  if (kind_ == Kind::HierMnl) {
    multipliers_.push_back({"1/theta_m", 1.0, true});
    targets_.push_back(hm);
  } else {
    multipliers_.push_back({"1/theta_m", 1.0, true});
    targets_.push_back(hn);
    for (std::size_t n : free_nests_) {
      multipliers_.push_back({"tau_" + h.tree().nest_names[n] + "/theta_m", 1.0, true});
      targets_.push_back(hw[n]);
    }
  }
  const std::size_t nk = attributes_.dest_attribute_count, nq = attributes_.mode_attribute_count;
  for (std::size_t k = 0; k < nk; ++k) {
    double s = 0.0;
    for (std::size_t o = 0; o < h.od_count(); ++o) s += obs.od[o] * attributes_.dest[o * nk + k];
    multipliers_.push_back({"beta_k[" + std::to_string(k) + "]", 0.0, false});
    targets_.push_back(s);
  }
  for (std::size_t q : free_mode_attrs_) {
    double s = 0.0;
    for (std::size_t c = 0; c < h.odm_count(); ++c)
      s += obs.od_mode[c] * attributes_.mode[c * nq + q];
    multipliers_.push_back({"beta_q[" + std::to_string(q) + "]", 0.0, false});
    targets_.push_back(s);
  }
}

std::string HierarchicalCalibration::name() const {
  if (kind_ == Kind::HierMnl) return "HierMNL";
  return penalty_.sigma != 0.0 ? "FirstStageVariant" : "FirstStage";
}

ModelParameters HierarchicalCalibration::parameters(std::span<const double> mult) const {
  const auto& h = *hierarchy_;
  if (mult.size() != multipliers_.size())
    throw std::invalid_argument("multiplier vector has the wrong length");
  ModelParameters p;
  std::size_t k = 0;
  p.theta_dest = 1.0 / mult[k++];
  double b = mult[k++];
  p.theta_mode = 1.0 / b;
  p.theta_route = kind_ == Kind::HierMnl ? 1.0 : theta_route_;
  p.tau.assign(h.nest_count(), 1.0);
  for (std::size_t n : free_nests_) p.tau[n] = mult[k++] / b;
  p.beta_dest.assign(mult.begin() + static_cast<std::ptrdiff_t>(k),
                     mult.begin() + static_cast<std::ptrdiff_t>(k + attributes_.dest_attribute_count));
  k += attributes_.dest_attribute_count;
  p.beta_mode.assign(attributes_.mode_attribute_count, 0.0);
  for (const auto& [q, v] : fixed_mode_) p.beta_mode[q] = v;
  for (std::size_t q : free_mode_attrs_) p.beta_mode[q] = mult[k++];
  return p;
}

std::vector<double> HierarchicalCalibration::multipliers_for(const ModelParameters& p) const {
  std::vector<double> m;
  m.push_back(1.0 / p.theta_dest);
  m.push_back(1.0 / p.theta_mode);
  for (std::size_t n : free_nests_) m.push_back(p.tau.at(n) / p.theta_mode);
  for (double b : p.beta_dest) m.push_back(b);
  for (std::size_t q : free_mode_attrs_) m.push_back(p.beta_mode.at(q));
  if (m.size() != multipliers_.size())
    throw std::invalid_argument("parameters do not match the calibration layout");
  return m;
}

std::unique_ptr<ConvexProgram> HierarchicalCalibration::inner(
    std::span<const double> mult) const {
  const auto& h = *hierarchy_;
  ModelParameters p = parameters(mult);
  EntropyWeights w;
  w.dest = mult[0];
  w.nest = mult[1];
  w.route = kind_ == Kind::HierMnl ? 1.0 : 1.0 / theta_route_;
  w.within.assign(h.nest_count(), mult[1]);
  for (std::size_t k = 0; k < free_nests_.size(); ++k) w.within[free_nests_[k]] = mult[2 + k];
  auto v = FixedUtilities::from_attributes(h, attributes_, p.beta_dest, p.beta_mode);
  return std::make_unique<HierarchicalProgram>(hierarchy_, observations_.origin_totals, v, w,
                                               penalty_, name() + ".inner");
}

std::vector<double> HierarchicalCalibration::residuals(const ConvexProgram& inner,
                                                       std::span<const double> x) const {
  const auto* prog = dynamic_cast<const HierarchicalProgram*>(&inner);
  if (!prog) throw std::invalid_argument("inner program is not hierarchical");
  const auto& h = *hierarchy_;
  TripTables t = prog->trips(x);
  std::vector<double> r;
  r.push_back(prog->destination_entropy(x));
  if (kind_ == Kind::HierMnl) {
    auto w = prog->within_nest_entropy(x);
    r.push_back(w[0]);
  } else {
    r.push_back(prog->nest_entropy(x));
    auto w = prog->within_nest_entropy(x);
    for (std::size_t n : free_nests_) r.push_back(w[n]);
  }
  const std::size_t nk = attributes_.dest_attribute_count, nq = attributes_.mode_attribute_count;
  for (std::size_t k = 0; k < nk; ++k) {
    double s = 0.0;
    for (std::size_t o = 0; o < h.od_count(); ++o) s += t.od[o] * attributes_.dest[o * nk + k];
    r.push_back(s);
  }
  for (std::size_t q : free_mode_attrs_) {
    double s = 0.0;
    for (std::size_t c = 0; c < h.odm_count(); ++c) s += t.od_mode[c] * attributes_.mode[c * nq + q];
    r.push_back(s);
  }
  for (std::size_t k = 0; k < r.size(); ++k) r[k] -= targets_[k];
  return r;
}

void HierarchicalCalibration::dump(std::ostream& out) const {
  const auto& h = *hierarchy_;
  out << "calibration " << name() << "\n";
  out << "inner: hierarchical program over " << h.origin_count() << " origins, "
      << h.destination_count() << " destinations, " << h.nest_count() << " nests, "
      << h.mode_count() << " modes, " << h.route_count() << " routes\n";
  if (kind_ == Kind::FirstStage) out << "route entropy weight 1/theta_r = " << 1.0 / theta_route_ << "\n";
  if (penalty_.sigma != 0.0)
    out << "link-count penalty sigma = " << penalty_.sigma << ", huber width "
        << penalty_.huber_width << "\n";
  for (const auto& [q, v] : fixed_mode_)
    out << "fixed beta_q[" << q << "] = " << v << " (aggregate constraint dropped)\n";
  out << "constraints:\n";
  for (std::size_t k = 0; k < multipliers_.size(); ++k) {
    const auto& lab = multipliers_[k].label;
    std::string what;
    if (lab == "1/theta_j") what = "destination entropy = observed";
    else if (lab == "1/theta_m") what = kind_ == Kind::HierMnl ? "mode entropy = observed" : "nest entropy = observed";
    else if (lab.rfind("tau_", 0) == 0) what = "within-nest entropy = observed";
    else what = "attribute aggregate = observed";
    out << "  " << what << "  target " << targets_[k] << "  [" << lab << "]\n";
  }
}

std::unique_ptr<HierarchicalCalibration> build_hier_mnl(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, ObservationBundle observations,
    AttributeTable attributes, std::vector<std::pair<std::size_t, double>> fixed_mode) {
  return std::make_unique<HierarchicalCalibration>(
      HierarchicalCalibration::Kind::HierMnl, std::move(hierarchy), std::move(observations),
      std::move(attributes), 1.0, LinkCountPenalty{}, std::move(fixed_mode));
}

std::unique_ptr<HierarchicalCalibration> build_first_stage(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, ObservationBundle observations,
    AttributeTable attributes, double theta_route) {
  return std::make_unique<HierarchicalCalibration>(
      HierarchicalCalibration::Kind::FirstStage, std::move(hierarchy), std::move(observations),
      std::move(attributes), theta_route);
}

std::unique_ptr<HierarchicalCalibration> build_first_stage_variant(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, ObservationBundle observations,
    AttributeTable attributes, double theta_route, double sigma,
    std::vector<double> observed_flows, double huber_width) {
  LinkCountPenalty pen{sigma, huber_width, std::move(observed_flows)};
  return std::make_unique<HierarchicalCalibration>(
      HierarchicalCalibration::Kind::FirstStage, std::move(hierarchy), std::move(observations),
      std::move(attributes), theta_route, std::move(pen));
}

}  // namespace demandforge
