#include "partseg/taxonomy.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace partseg {

Category parse_category(const std::string& name) {
  const std::string sep = "'s ";
  auto pos = name.rfind(sep);
  if (pos == std::string::npos)
    throw MalformedCategory("category name lacks \"'s \" separator: \"" + name + "\"");
  Category c;
  c.object = name.substr(0, pos);
  c.part = name.substr(pos + sep.size());
  c.name = name;
  if (c.object.empty() || c.part.empty())
    throw MalformedCategory("category name has empty object or part: \"" + name + "\"");
  return c;
}

Taxonomy build_taxonomy(const std::vector<std::string>& names,
                        const std::vector<std::string>& unseen_objects) {
  if (names.empty()) throw EmptyCategoryList("taxonomy needs at least one category");
  Taxonomy t;
  std::unordered_map<std::string, int> obj_idx, part_idx;
  std::unordered_set<std::string> seen_names;
  for (const auto& name : names) {
    if (!seen_names.insert(name).second)
      throw DuplicateCategory("duplicate category name: \"" + name + "\"");
    Category c = parse_category(name);
    auto [oi, onew] = obj_idx.try_emplace(c.object, static_cast<int>(t.objects_.size()));
    if (onew) t.objects_.push_back(c.object);
    auto [pi, pnew] = part_idx.try_emplace(c.part, static_cast<int>(t.parts_.size()));
    if (pnew) t.parts_.push_back(c.part);
    t.pair_object_.push_back(oi->second);
    t.pair_part_.push_back(pi->second);
    t.pairs_.push_back(std::move(c));
  }
  t.unseen_flag_.assign(t.objects_.size(), false);
  std::unordered_set<std::string> unseen_dedup;
  for (const auto& u : unseen_objects) {
    auto it = obj_idx.find(u);
    if (it == obj_idx.end())
      throw UnknownObject("unseen object \"" + u + "\" is not among the category objects");
    if (unseen_dedup.insert(u).second) {
      t.unseen_flag_[static_cast<std::size_t>(it->second)] = true;
      t.unseen_names_.push_back(u);
    }
  }
  return t;
}

int Taxonomy::object_index(const std::string& name) const {
  for (std::size_t i = 0; i < objects_.size(); ++i)
    if (objects_[i] == name) return static_cast<int>(i);
  return -1;
}

int Taxonomy::pair_index(const std::string& name) const {
  for (std::size_t i = 0; i < pairs_.size(); ++i)
    if (pairs_[i].name == name) return static_cast<int>(i);
  return -1;
}

std::vector<int> Taxonomy::pairs_of_object(int obj_idx) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < pairs_.size(); ++i)
    if (pair_object_[i] == obj_idx) out.push_back(static_cast<int>(i));
  return out;
}

SplitIndices Taxonomy::split_indices() const {
  SplitIndices s;
  for (int i = 0; i < n_pairs(); ++i) {
    if (unseen_flag_[static_cast<std::size_t>(pair_object_[static_cast<std::size_t>(i)])])
      s.unseen_pairs.push_back(i);
    else
      s.seen_pairs.push_back(i);
  }
  for (int i = 0; i < n_objects(); ++i) {
    if (unseen_flag_[static_cast<std::size_t>(i)])
      s.unseen_objects.push_back(i);
    else
      s.seen_objects.push_back(i);
  }
  return s;
}

std::string taxonomy_to_json(const Taxonomy& t) {
  nlohmann::ordered_json j;
  j["categories"] = nlohmann::ordered_json::array();
  for (const auto& c : t.pairs()) j["categories"].push_back(c.name);
  j["unseen_objects"] = t.unseen_object_names();
  return j.dump(2) + "\n";
}

Taxonomy taxonomy_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("taxonomy json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("categories") || !j["categories"].is_array())
    throw ParseError("taxonomy json: missing \"categories\" array");
  std::vector<std::string> names, unseen;
  for (const auto& v : j["categories"]) {
    if (!v.is_string()) throw ParseError("taxonomy json: category entries must be strings");
    names.push_back(v.get<std::string>());
  }
  if (j.contains("unseen_objects")) {
    if (!j["unseen_objects"].is_array())
      throw ParseError("taxonomy json: \"unseen_objects\" must be an array");
    for (const auto& v : j["unseen_objects"]) {
      if (!v.is_string()) throw ParseError("taxonomy json: unseen entries must be strings");
      unseen.push_back(v.get<std::string>());
    }
  }
  return build_taxonomy(names, unseen);
}

Taxonomy load_taxonomy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open taxonomy file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return taxonomy_from_json(ss.str());
}

void save_taxonomy(const Taxonomy& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write taxonomy file: " + path);
  out << taxonomy_to_json(t);
}

Taxonomy seen_subtaxonomy(const Taxonomy& full) {
  std::vector<std::string> names;
  for (int i = 0; i < full.n_pairs(); ++i)
    if (!full.object_is_unseen(full.pair_object(i)))
      names.push_back(full.pairs()[static_cast<std::size_t>(i)].name);
  return build_taxonomy(names, {});
}

std::vector<int> pair_remap(const Taxonomy& full, const Taxonomy& sub) {
  std::unordered_map<std::string, int> sub_idx;
  for (int i = 0; i < sub.n_pairs(); ++i)
    sub_idx[sub.pairs()[static_cast<std::size_t>(i)].name] = i;
  std::vector<int> remap(static_cast<std::size_t>(full.n_pairs()), -1);
  for (int i = 0; i < full.n_pairs(); ++i) {
    auto it = sub_idx.find(full.pairs()[static_cast<std::size_t>(i)].name);
    if (it != sub_idx.end()) remap[static_cast<std::size_t>(i)] = it->second;
  }
  return remap;
}

}  // namespace partseg
