#include "gating/naive.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace moe {

int ConcatenatedLogits::segment_of(int flat_index) const {
  for (int s = segments() - 1; s >= 0; --s) {
    if (flat_index >= offsets[s]) return s;
  }
  fail(ErrorCode::InvalidArgument, "flat index outside every segment");
}

ConcatenatedLogits concat(const std::vector<std::vector<float>>& per_expert) {
  require(!per_expert.empty(), ErrorCode::InvalidArgument, "no expert outputs to concatenate");
  ConcatenatedLogits c;
  for (size_t e = 0; e < per_expert.size(); ++e) {
    require(!per_expert[e].empty(), ErrorCode::InvalidArgument,
            "expert " + std::to_string(e) + " contributed no logits");
    c.offsets.push_back(static_cast<int>(c.flat.size()));
    c.flat.insert(c.flat.end(), per_expert[e].begin(), per_expert[e].end());
  }
  return c;
}

NaiveStat naive_stat_from_string(const std::string& name) {
  if (name == "argmax") return NaiveStat::Argmax;
  if (name == "ratio") return NaiveStat::Ratio;
  if (name == "overall-ratio") return NaiveStat::OverallRatio;
  if (name == "q3diff") return NaiveStat::Q3Diff;
  if (name == "std") return NaiveStat::Std;
  fail(ErrorCode::InvalidArgument,
       "unknown statistic '" + name + "' (argmax|ratio|overall-ratio|q3diff|std)");
}

std::string to_string(NaiveStat stat) {
  switch (stat) {
    case NaiveStat::Argmax: return "argmax";
    case NaiveStat::Ratio: return "ratio";
    case NaiveStat::OverallRatio: return "overall-ratio";
    case NaiveStat::Q3Diff: return "q3diff";
    case NaiveStat::Std: return "std";
  }
  return "?";
}

namespace {

GatingDecision decision_at(const ConcatenatedLogits& c, int flat_index, GatePath path) {
  GatingDecision d;
  d.expert_id = c.segment_of(flat_index);
  d.local_class = flat_index - c.seg_begin(d.expert_id);
  d.global_class = flat_index;
  d.path = path;
  return d;
}

int argmax_within(const ConcatenatedLogits& c, int segment) {
  int best = c.seg_begin(segment);
  for (int i = best + 1; i < c.seg_end(segment); ++i) {
    if (c.flat[i] > c.flat[best]) best = i;
  }
  return best;
}

}  // namespace

GatingDecision decide_argmax(const ConcatenatedLogits& c) {
  require(!c.flat.empty(), ErrorCode::InvalidArgument, "empty concatenation");
  int best = 0;
  for (int i = 1; i < static_cast<int>(c.flat.size()); ++i) {
    if (c.flat[i] > c.flat[best]) best = i;
  }
  return decision_at(c, best, GatePath::Statistic);
}

GatingDecision decide_ratio(const ConcatenatedLogits& c) {
  require(!c.flat.empty(), ErrorCode::InvalidArgument, "empty concatenation");
  int best = -1;
  double best_score = 0.0;
  for (int s = 0; s < c.segments(); ++s) {
    double sum = 0.0;
    for (int i = c.seg_begin(s); i < c.seg_end(s); ++i) sum += c.flat[i];
    if (sum == 0.0) continue;  // excluded, division guard
    for (int i = c.seg_begin(s); i < c.seg_end(s); ++i) {
      double score = c.flat[i] / sum;
      if (best < 0 || score > best_score) {
        best = i;
        best_score = score;
      }
    }
  }
  require(best >= 0, ErrorCode::InvalidArgument,
          "every segment sums to zero; ratio statistic undefined");
  return decision_at(c, best, GatePath::Statistic);
}

GatingDecision decide_overall_ratio(const ConcatenatedLogits& c) {
  require(!c.flat.empty(), ErrorCode::InvalidArgument, "empty concatenation");
  double total = 0.0;
  for (float v : c.flat) total += v;
  require(total != 0.0, ErrorCode::InvalidArgument,
          "concatenation sums to zero; overall ratio undefined");
  int best = 0;
  double best_score = c.flat[0] / total;
  for (int i = 1; i < static_cast<int>(c.flat.size()); ++i) {
    double score = c.flat[i] / total;
    if (score > best_score) {
      best = i;
      best_score = score;
    }
  }
  return decision_at(c, best, GatePath::Statistic);
}

double sorted_quantile(const std::vector<float>& sorted, double q) {
  require(!sorted.empty(), ErrorCode::InvalidArgument, "quantile of an empty range");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (static_cast<double>(sorted[lo + 1]) - sorted[lo]);
}

GatingDecision decide_q3diff(const ConcatenatedLogits& c) {
  require(!c.flat.empty(), ErrorCode::InvalidArgument, "empty concatenation");
  int best_seg = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<float> sorted;
  for (int s = 0; s < c.segments(); ++s) {
    sorted.assign(c.flat.begin() + c.seg_begin(s), c.flat.begin() + c.seg_end(s));
    std::sort(sorted.begin(), sorted.end());
    double score = static_cast<double>(sorted.back()) - sorted_quantile(sorted, 0.75);
    if (score > best_score) {
      best_score = score;
      best_seg = s;
    }
  }
  return decision_at(c, argmax_within(c, best_seg), GatePath::Statistic);
}

GatingDecision decide_std(const ConcatenatedLogits& c) {
  require(!c.flat.empty(), ErrorCode::InvalidArgument, "empty concatenation");
  int best_seg = 0;
  double best_std = std::numeric_limits<double>::infinity();
  for (int s = 0; s < c.segments(); ++s) {
    const int n = c.seg_end(s) - c.seg_begin(s);
    double mean = 0.0;
    for (int i = c.seg_begin(s); i < c.seg_end(s); ++i) mean += c.flat[i];
    mean /= n;
    double var = 0.0;
    for (int i = c.seg_begin(s); i < c.seg_end(s); ++i) {
      double d = c.flat[i] - mean;
      var += d * d;
    }
    double sd = std::sqrt(var / n);
    if (sd < best_std) {
      best_std = sd;
      best_seg = s;
    }
  }
  return decision_at(c, argmax_within(c, best_seg), GatePath::Statistic);
}

GatingDecision decide(const ConcatenatedLogits& c, NaiveStat stat) {
  switch (stat) {
    case NaiveStat::Argmax: return decide_argmax(c);
    case NaiveStat::Ratio: return decide_ratio(c);
    case NaiveStat::OverallRatio: return decide_overall_ratio(c);
    case NaiveStat::Q3Diff: return decide_q3diff(c);
    case NaiveStat::Std: return decide_std(c);
  }
  fail(ErrorCode::InvalidArgument, "unknown statistic");
}

ConcatenatedLogits MixtureTrace::concat_row(size_t sample) const {
  ConcatenatedLogits c;
  for (size_t e = 0; e < logits.size(); ++e) {
    const int k = logits[e].dim(1);
    c.offsets.push_back(static_cast<int>(c.flat.size()));
    const float* row = logits[e].row(static_cast<int>(sample), k);
    c.flat.insert(c.flat.end(), row, row + k);
  }
  return c;
}

MixtureTrace trace_mixture(const std::vector<const ExpertModel*>& experts,
                           const MixedTestSet& mixed, int threads) {
  require(!experts.empty(), ErrorCode::InvalidArgument, "no experts");
  require(experts.size() == mixed.spec.components.size(), ErrorCode::InvalidArgument,
          "expert count does not match the mixture spec");
  require(mixed.size() > 0, ErrorCode::InvalidArgument, "empty mixed test set");
  if (threads <= 0) threads = default_thread_count();
  const int n = static_cast<int>(mixed.size());

  MixtureTrace trace;
  trace.sample_count = mixed.size();
  trace.logits.resize(experts.size());
  trace.final_fc.resize(experts.size());
  for (size_t e = 0; e < experts.size(); ++e) {
    trace.logits[e] = Tensor::zeros({n, experts[e]->class_count});
    trace.final_fc[e] = Tensor::zeros({n, kFinalFcWidth});
  }

  parallel_chunks(n, threads, [&](int64_t b, int64_t end) {
    constexpr int kBatch = 128;
    std::vector<float> unit;  // one sample, native channels, [0,1]
    for (int64_t start = b; start < end; start += kBatch) {
      const int bn = static_cast<int>(std::min<int64_t>(kBatch, end - start));
      for (size_t e = 0; e < experts.size(); ++e) {
        const ExpertModel& expert = *experts[e];
        IOShape in = expert.input_shape();
        Tensor batch = Tensor::zeros({bn, in.c, in.h, in.w});
        for (int i = 0; i < bn; ++i) {
          const MixedSample& s = mixed.samples[start + i];
          unit.resize(s.pixels.size());
          for (size_t j = 0; j < s.pixels.size(); ++j) unit[j] = u8_to_unit(s.pixels[j]);
          // each sample is standardized with its source expert's constants
          prepare_cross_image(expert, unit.data(), s.channels, mixed.h, mixed.w,
                              experts[s.component]->norm, batch.row(i, in.c * in.h * in.w));
        }
        TraceFeatures f = infer_with_trace(expert, batch);
        std::copy(f.logits.data.begin(), f.logits.data.end(),
                  trace.logits[e].data.begin() + start * expert.class_count);
        std::copy(f.final_fc.data.begin(), f.final_fc.data.end(),
                  trace.final_fc[e].data.begin() + start * kFinalFcWidth);
      }
    }
  });
  return trace;
}

double evaluate_naive(const MixtureTrace& trace, const MixedTestSet& mixed, NaiveStat stat) {
  require(trace.sample_count == mixed.size(), ErrorCode::InvalidArgument,
          "trace/test set size mismatch");
  long correct = 0;
  for (size_t i = 0; i < mixed.size(); ++i) {
    GatingDecision d = decide(trace.concat_row(i), stat);
    if (d.global_class == mixed.samples[i].global_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mixed.size());
}

double evaluate_naive(const std::vector<const ExpertModel*>& experts, const MixedTestSet& mixed,
                      NaiveStat stat, int threads) {
  return evaluate_naive(trace_mixture(experts, mixed, threads), mixed, stat);
}

}  // namespace moe
