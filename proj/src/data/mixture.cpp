#include "data/mixture.hpp"

#include <numeric>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace moe {

int MixtureSpec::total_classes() const {
  int n = 0;
  for (const auto& c : components) n += c.class_count;
  return n;
}

int MixtureSpec::global_label(int expert_id, int local_class) const {
  for (const auto& c : components) {
    if (c.expert_id == expert_id) return c.global_offset + local_class;
  }
  fail(ErrorCode::InvalidArgument, "unknown expert id " + std::to_string(expert_id));
}

int MixtureSpec::expert_for_global(int global_class) const {
  for (const auto& c : components) {
    if (global_class >= c.global_offset && global_class < c.global_offset + c.class_count)
      return c.expert_id;
  }
  fail(ErrorCode::InvalidArgument, "global class " + std::to_string(global_class) +
                                       " outside every expert's range");
}

void MixtureSpec::validate() const {
  require(!components.empty(), ErrorCode::InvalidArgument, "mixture has no components");
  int expect_offset = 0;
  for (size_t i = 0; i < components.size(); ++i) {
    const auto& c = components[i];
    require(c.class_count > 0, ErrorCode::InvalidArgument,
            "component " + std::to_string(i) + " has no classes");
    require(c.global_offset == expect_offset, ErrorCode::InvalidArgument,
            "component " + std::to_string(i) + " offset " + std::to_string(c.global_offset) +
                " overlaps or leaves a gap (expected " + std::to_string(expect_offset) + ")");
    expect_offset += c.class_count;
  }
}

MixtureSpec make_mixture_spec(const std::vector<int>& class_counts,
                              const std::vector<std::string>& tags) {
  require(class_counts.size() == tags.size(), ErrorCode::InvalidArgument,
          "class_counts/tags length mismatch");
  MixtureSpec spec;
  int offset = 0;
  for (size_t i = 0; i < class_counts.size(); ++i) {
    spec.components.push_back({tags[i], static_cast<int>(i), offset, class_counts[i]});
    offset += class_counts[i];
  }
  spec.validate();
  return spec;
}

std::vector<size_t> MixedTestSet::global_histogram() const {
  std::vector<size_t> hist(spec.total_classes(), 0);
  for (const auto& s : samples) ++hist[s.global_label];
  return hist;
}

MixedTestSet build_mixed_testset(const MixtureSpec& spec,
                                 const std::vector<const ImageDataset*>& test_sets, uint64_t seed,
                                 int target_h, int target_w) {
  spec.validate();
  require(test_sets.size() == spec.components.size(), ErrorCode::InvalidArgument,
          "one test set per mixture component required");
  MixedTestSet mixed;
  mixed.h = target_h;
  mixed.w = target_w;
  mixed.spec = spec;
  for (size_t ci = 0; ci < spec.components.size(); ++ci) {
    const MixtureComponent& comp = spec.components[ci];
    require(test_sets[ci] != nullptr, ErrorCode::InvalidArgument, "missing test set");
    ImageDataset padded = pad_to(*test_sets[ci], target_h, target_w);
    require(padded.class_count == comp.class_count, ErrorCode::InvalidArgument,
            "component " + comp.dataset_tag + " class count " +
                std::to_string(padded.class_count) + " != spec " +
                std::to_string(comp.class_count));
    for (size_t i = 0; i < padded.size(); ++i) {
      MixedSample s;
      s.pixels.assign(padded.image(i), padded.image(i) + padded.image_bytes());
      s.channels = padded.c;
      s.global_label = comp.global_offset + padded.labels[i];
      s.component = static_cast<int>(ci);
      mixed.samples.push_back(std::move(s));
    }
  }
  Rng rng(mix_seed(seed, 0x4d495845));
  rng.shuffle(mixed.samples.begin(), mixed.samples.end());
  return mixed;
}

}  // namespace moe
