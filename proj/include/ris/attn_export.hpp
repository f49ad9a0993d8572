#pragma once

#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "ris/beam.hpp"
#include "ris/model.hpp"

namespace ris {

namespace attn_detail {

template <typename T>
void write_row(std::ofstream& out, const std::string& kind,
               const std::string& step, const Array<T>& row) {
  out << kind << ',' << step;
  for (int i = 0; i < row.numel(); ++i) out << ',' << row.at(i);
  out << "\n";
}

template <typename T>
void write_mask_row(std::ofstream& out, const std::string& kind,
                    const Array<T>& mask) {
  out << kind << ',';
  for (int i = 0; i < mask.numel(); ++i) out << ',' << mask.at(i);
  out << "\n";
}

template <typename T>
Array<T> mean_rows(const std::vector<Array<T>>& rows) {
  Array<T> avg = Array<T>::vec(rows[0].numel());
  for (const auto& r : rows)
    for (int i = 0; i < r.numel(); ++i) avg.at(i) += r.at(i);
  for (auto& x : avg.v) x /= static_cast<T>(rows.size());
  return avg;
}

template <typename T>
void write_decoder_csv(const std::string& path, int n,
                       const RoleMaskArrays<T>& masks,
                       const std::vector<Array<T>>& same,
                       const std::vector<Array<T>>& cross,
                       const std::vector<Array<T>>& final_rows) {
  std::ofstream out(path);
  RIS_REQUIRE(out.good(), "cannot write attention dump to " << path);
  out << std::setprecision(10);
  out << "kind,step";
  for (int i = 0; i < n; ++i) out << ",p" << i;
  out << "\n";
  write_mask_row(out, "user_mask", masks.user);
  write_mask_row(out, "agent_mask", masks.agent);
  auto dump = [&](const char* kind, const std::vector<Array<T>>& rows) {
    if (rows.empty()) return;
    for (std::size_t t = 0; t < rows.size(); ++t)
      write_row(out, kind, std::to_string(t + 1), rows[t]);
    write_row(out, kind, "avg", mean_rows(rows));
  };
  dump("same", same);
  dump("cross", cross);
  dump("final", final_rows);
}

// Inputs consumed while decoding this side: BOS plus every emitted token,
// except that an unfinished hypothesis never consumed its last token.
inline std::vector<int> consumed_inputs(const DecodedSide& side) {
  std::vector<int> in(1, Vocabulary::kBos);
  const std::size_t upto =
      side.finished ? side.ids.size()
                    : (side.ids.empty() ? 0 : side.ids.size() - 1);
  in.insert(in.end(), side.ids.begin(), side.ids.begin() + upto);
  return in;
}

}  // namespace attn_detail

// Greedy-decodes the example and writes one CSV per decoder: per-step
// same/cross attention rows over input positions, their Avg row, and the
// role masks.
template <typename Model>
DecodedPair export_attention(Model& model, const EncodedExample& ex,
                             const DecodeLimits& lim,
                             const std::string& out_dir) {
  using T = typename Model::Scalar;
  DecodedPair decoded = greedy_decode(model, ex, lim);
  AttnTrace<T> trace;
  model.trace_pair(ex, attn_detail::consumed_inputs(decoded.user),
                   attn_detail::consumed_inputs(decoded.agent), trace);
  const int n = ex.input_len();
  const auto masks = make_mask_arrays<T>(ex.masks, n);
  attn_detail::write_decoder_csv(out_dir + "/user_attn.csv", n, masks,
                                 trace.user_same, trace.user_cross,
                                 trace.user_final);
  attn_detail::write_decoder_csv(out_dir + "/agent_attn.csv", n, masks,
                                 trace.agent_same, trace.agent_cross,
                                 trace.agent_final);
  return decoded;
}

}  // namespace ris
