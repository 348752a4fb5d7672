#pragma once

// Flat storage of the truncated amplitude vector over the <=2 excitation
// manifolds. Single excitations are indexed by "modes": e_h -> h and
// r_h -> N + h. A double excitation is an unordered pair of modes; the flat
// layout is [e | r | ee | er | rr].
//
// Hard-core occupancy (the spin model) forbids two excitations on the same
// atom. Bosonic occupancy keeps same-atom pairs, which makes the
// non-interacting medium exactly linear. Same-mode bosonic slots (ee_hh,
// rr_hh) store the symmetric-tensor coefficient C_mm; the normalized Fock
// amplitude is C_mm / sqrt(2).

#include <cstdio>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rydpulse/model.hpp"

namespace rydpulse {

enum class Occupancy { hard_core, bosonic };

enum class Block { e, r, ee, er, rr };

struct SlotRef {
  Block block;
  int a;       // atom index (e atom for er)
  int b = -1;  // second atom (r atom for er); -1 for singles
  bool operator==(const SlotRef&) const = default;
};

class ExcitationIndex {
public:
  ExcitationIndex(int n_atoms, Occupancy occ, BlockadeMode mode,
                  std::vector<std::pair<int, int>> rr_atom_pairs)
      : n_atoms_(n_atoms), occ_(occ), mode_(mode) {
    if (n_atoms < 1) throw ConfigError("ExcitationIndex needs n_atoms >= 1");
    const int nm = n_modes();
    table_.assign(static_cast<std::size_t>(nm) * nm, -1);
    const bool same = occ == Occupancy::bosonic;
    const int n = n_atoms;
    off_ee_ = 2 * static_cast<std::size_t>(n);
    for (int h = 0; h < n; ++h)
      for (int j = same ? h : h + 1; j < n; ++j) add_pair(e_mode(h), e_mode(j));
    off_er_ = off_ee_ + pairs_.size();
    for (int h = 0; h < n; ++h)
      for (int j = 0; j < n; ++j)
        if (same || h != j) add_pair(e_mode(h), r_mode(j));
    off_rr_ = off_ee_ + pairs_.size();
    for (auto [h, j] : rr_atom_pairs) {
      if (h > j) std::swap(h, j);
      if (h < 0 || j >= n || (h == j && !same)) throw ConfigError("invalid rr pair");
      add_pair(r_mode(h), r_mode(j));
    }
    dim_ = off_ee_ + pairs_.size();
  }

  int n_atoms() const { return n_atoms_; }
  Occupancy occupancy() const { return occ_; }
  BlockadeMode blockade_mode() const { return mode_; }
  int n_modes() const { return 2 * n_atoms_; }
  int e_mode(int h) const { return h; }
  int r_mode(int h) const { return n_atoms_ + h; }
  bool is_e_mode(int m) const { return m < n_atoms_; }
  int atom_of(int m) const { return m < n_atoms_ ? m : m - n_atoms_; }

  std::size_t dim() const { return dim_; }
  std::size_t n_singles() const { return off_ee_; }
  std::size_t n_doubles() const { return pairs_.size(); }
  std::size_t ee_count() const { return off_er_ - off_ee_; }
  std::size_t er_count() const { return off_rr_ - off_er_; }
  std::size_t rr_count() const { return dim_ - off_rr_; }

  // Mode pair (m <= n) stored at double slot k (0-based within doubles).
  std::pair<int, int> pair_modes(std::size_t k) const { return pairs_[k]; }
  // Flat index of the double with modes (m, n) in either order, or -1.
  long pair_slot(int m, int n) const {
    return table_[static_cast<std::size_t>(m) * n_modes() + n];
  }

  bool contains(const SlotRef& s) const { return lookup(s) >= 0; }

  std::size_t flat(const SlotRef& s) const {
    const long f = lookup(s);
    if (f < 0) throw ConfigError("slot not present in excitation index");
    return static_cast<std::size_t>(f);
  }

  SlotRef unpack(std::size_t f) const {
    if (f >= dim_) throw ConfigError("flat index out of range");
    if (f < off_ee_) {
      const int m = static_cast<int>(f);
      return is_e_mode(m) ? SlotRef{Block::e, m} : SlotRef{Block::r, atom_of(m)};
    }
    const auto [m, n] = pairs_[f - off_ee_];
    const Block blk = f < off_er_ ? Block::ee : (f < off_rr_ ? Block::er : Block::rr);
    return {blk, atom_of(m), atom_of(n)};
  }

private:
  long lookup(const SlotRef& s) const {
    const int n = n_atoms_;
    auto atom_ok = [n](int h) { return h >= 0 && h < n; };
    switch (s.block) {
      case Block::e: return atom_ok(s.a) ? s.a : -1;
      case Block::r: return atom_ok(s.a) ? n + s.a : -1;
      case Block::ee: return atom_ok(s.a) && atom_ok(s.b) ? pair_slot(e_mode(s.a), e_mode(s.b)) : -1;
      case Block::er: return atom_ok(s.a) && atom_ok(s.b) ? pair_slot(e_mode(s.a), r_mode(s.b)) : -1;
      case Block::rr: return atom_ok(s.a) && atom_ok(s.b) ? pair_slot(r_mode(s.a), r_mode(s.b)) : -1;
    }
    return -1;
  }

  void add_pair(int m, int n) {
    const long f = static_cast<long>(off_ee_ + pairs_.size());
    pairs_.emplace_back(m, n);
    table_[static_cast<std::size_t>(m) * n_modes() + n] = f;
    table_[static_cast<std::size_t>(n) * n_modes() + m] = f;
  }

  int n_atoms_;
  Occupancy occ_;
  BlockadeMode mode_;
  std::size_t off_ee_ = 0, off_er_ = 0, off_rr_ = 0, dim_ = 0;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<long> table_;
};

using IndexPtr = std::shared_ptr<const ExcitationIndex>;

// rr pairs are kept exactly when interaction() is not BLOCKED.
inline IndexPtr build_index(const AtomChain& chain, const BlockadeConfig& blockade,
                            Occupancy occ = Occupancy::hard_core) {
  chain.validate();
  const int n = chain.n_atoms;
  std::vector<std::pair<int, int>> rr;
  const bool same = occ == Occupancy::bosonic;
  for (int h = 0; h < n; ++h)
    for (int j = same ? h : h + 1; j < n; ++j)
      if (interaction(blockade, std::abs(chain.positions[j] - chain.positions[h])))
        rr.emplace_back(h, j);
  return std::make_shared<const ExcitationIndex>(n, occ, blockade.mode, std::move(rr));
}

// ---------------------------------------------------------------------------
// Amplitudes per unit peak drive (doubles per unit drive squared). The ground
// amplitude is 1 for propagated states; field-conditioned states carry the
// emitted amplitude there instead. A state built with singles_only has no
// double block stored.
struct TruncatedState {
  IndexPtr index;
  cplx ground{1.0, 0.0};
  std::vector<cplx> amp;

  std::span<const cplx> singles() const { return {amp.data(), index->n_singles()}; }
  std::span<cplx> singles() { return {amp.data(), index->n_singles()}; }
  bool has_doubles() const { return amp.size() == index->dim(); }
  std::span<const cplx> doubles() const {
    return has_doubles() ? std::span<const cplx>(amp.data() + index->n_singles(), index->n_doubles())
                         : std::span<const cplx>();
  }

  cplx& at(const SlotRef& s) { return amp.at(index->flat(s)); }
  cplx at(const SlotRef& s) const { return amp.at(index->flat(s)); }

  double singles_norm2() const {
    double s = 0;
    for (const auto& a : singles()) s += std::norm(a);
    return s;
  }
  // Squared norm of the two-excitation component in the physical basis.
  double doubles_norm2() const {
    double s = 0;
    const auto d = doubles();
    for (std::size_t k = 0; k < d.size(); ++k) {
      const auto [m, n] = index->pair_modes(k);
      s += (m == n ? 0.5 : 1.0) * std::norm(d[k]);
    }
    return s;
  }
  double excited_norm2() const { return singles_norm2() + doubles_norm2(); }

  bool all_finite() const {
    if (!std::isfinite(ground.real()) || !std::isfinite(ground.imag())) return false;
    for (const auto& a : amp)
      if (!std::isfinite(a.real()) || !std::isfinite(a.imag())) return false;
    return true;
  }
};

inline TruncatedState zero_state(const IndexPtr& idx, bool singles_only = false) {
  TruncatedState s;
  s.index = idx;
  s.amp.assign(singles_only ? idx->n_singles() : idx->dim(), cplx{});
  return s;
}

// ---------------------------------------------------------------------------
// Plain-text debug dump:
//   # rydpulse-state 1
//   # n_atoms <N> occupancy <hard_core|bosonic> entries <K>
//   ground <re> <im>
//   <flat index> <re> <im>          (one per stored amplitude)
inline std::string to_occupancy_name(Occupancy o) { return o == Occupancy::hard_core ? "hard_core" : "bosonic"; }

inline void write_state_dump(std::ostream& os, const TruncatedState& s) {
  char buf[128];
  os << "# rydpulse-state 1\n";
  os << "# n_atoms " << s.index->n_atoms() << " occupancy " << to_occupancy_name(s.index->occupancy())
     << " entries " << s.amp.size() << "\n";
  std::snprintf(buf, sizeof buf, "ground %.17g %.17g\n", s.ground.real(), s.ground.imag());
  os << buf;
  for (std::size_t k = 0; k < s.amp.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu %.17g %.17g\n", k, s.amp[k].real(), s.amp[k].imag());
    os << buf;
  }
}

inline TruncatedState read_state_dump(std::istream& is, const IndexPtr& idx) {
  std::string line;
  TruncatedState s;
  s.index = idx;
  std::size_t entries = 0;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "n_atoms") {
        int n = 0;
        std::string occ_key, occ, ent_key;
        ls >> n >> occ_key >> occ >> ent_key >> entries;
        if (n != idx->n_atoms() || occ != to_occupancy_name(idx->occupancy()))
          throw ConfigError("state dump does not match the excitation index");
        if (entries != idx->dim() && entries != idx->n_singles())
          throw ConfigError("state dump has unexpected entry count");
        s.amp.assign(entries, cplx{});
        header = true;
      }
      continue;
    }
    if (!header) throw ConfigError("state dump missing header");
    if (line.rfind("ground", 0) == 0) {
      std::string tag;
      double re = 0, im = 0;
      ls >> tag >> re >> im;
      s.ground = {re, im};
      continue;
    }
    std::size_t k = 0;
    double re = 0, im = 0;
    if (!(ls >> k >> re >> im) || k >= entries) throw ConfigError("malformed state dump line: " + line);
    s.amp[k] = {re, im};
  }
  if (!header) throw ConfigError("state dump missing header");
  return s;
}

}  // namespace rydpulse
