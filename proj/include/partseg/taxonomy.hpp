#pragma once

#include <string>
#include <vector>

#include "partseg/common.hpp"

namespace partseg {

// An object-part category like "dog's head": object "dog", part "head".
struct Category {
  std::string object;
  std::string part;
  std::string name;  // the full "<object>'s <part>" string
};

// Splits on the last "'s " so possessives inside the object survive,
// e.g. "chest of drawers's drawer".
Category parse_category(const std::string& name);

struct SplitIndices {
  std::vector<int> seen_pairs;
  std::vector<int> unseen_pairs;
  std::vector<int> seen_objects;
  std::vector<int> unseen_objects;
};

class Taxonomy {
 public:
  Taxonomy() = default;

  const std::vector<Category>& pairs() const { return pairs_; }
  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<std::string>& parts() const { return parts_; }
  const std::vector<std::string>& unseen_object_names() const { return unseen_names_; }

  int n_pairs() const { return static_cast<int>(pairs_.size()); }
  int n_objects() const { return static_cast<int>(objects_.size()); }
  int n_parts() const { return static_cast<int>(parts_.size()); }

  int pair_object(int pair_idx) const { return pair_object_.at(static_cast<std::size_t>(pair_idx)); }
  int pair_part(int pair_idx) const { return pair_part_.at(static_cast<std::size_t>(pair_idx)); }
  bool object_is_unseen(int obj_idx) const { return unseen_flag_.at(static_cast<std::size_t>(obj_idx)); }

  int object_index(const std::string& name) const;  // -1 if absent
  int pair_index(const std::string& name) const;    // -1 if absent

  std::vector<int> pairs_of_object(int obj_idx) const;
  SplitIndices split_indices() const;

  friend Taxonomy build_taxonomy(const std::vector<std::string>& names,
                                 const std::vector<std::string>& unseen_objects);

 private:
  std::vector<Category> pairs_;
  std::vector<std::string> objects_;
  std::vector<std::string> parts_;
  std::vector<int> pair_object_;
  std::vector<int> pair_part_;
  std::vector<bool> unseen_flag_;
  std::vector<std::string> unseen_names_;
};

// Category names keep their given order; objects and parts are deduplicated
// in first-appearance order.
Taxonomy build_taxonomy(const std::vector<std::string>& names,
                        const std::vector<std::string>& unseen_objects);

std::string taxonomy_to_json(const Taxonomy& t);
Taxonomy taxonomy_from_json(const std::string& text);
Taxonomy load_taxonomy(const std::string& path);
void save_taxonomy(const Taxonomy& t, const std::string& path);

// Training view for the zero-shot protocol: only pairs whose object is seen.
Taxonomy seen_subtaxonomy(const Taxonomy& full);

// Label remap from full-taxonomy pair index to sub-taxonomy pair index,
// -1 where the pair is absent from the sub-taxonomy.
std::vector<int> pair_remap(const Taxonomy& full, const Taxonomy& sub);

}  // namespace partseg
