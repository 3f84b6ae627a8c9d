#include "geoseg/dataset.hpp"

#include "geoseg/error.hpp"

namespace geoseg {

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    case Split::generalization: return "generalization";
  }
  return "unknown";
}

Split split_from_string(const std::string& name) {
  for (Split s : {Split::train, Split::validation, Split::test, Split::generalization})
    if (name == to_string(s)) return s;
  throw ConfigError("unknown split '" + name + "'");
}

std::vector<Frame>& Dataset::split(Split s) {
  switch (s) {
    case Split::train: return train;
    case Split::validation: return validation;
    case Split::test: return test;
    case Split::generalization: return generalization;
  }
  return train;
}

const std::vector<Frame>& Dataset::split(Split s) const {
  return const_cast<Dataset*>(this)->split(s);
}

std::vector<const Frame*> Dataset::labeled() const {
  std::vector<const Frame*> out;
  for (const auto& f : train)
    if (f.annotation) out.push_back(&f);
  return out;
}

std::vector<const Frame*> Dataset::unlabeled() const {
  std::vector<const Frame*> out;
  for (const auto& f : train)
    if (!f.annotation) out.push_back(&f);
  return out;
}

std::map<std::string, std::vector<const Frame*>> Dataset::train_sequences() const {
  std::map<std::string, std::vector<const Frame*>> out;
  for (const auto& f : train) out[f.sequence].push_back(&f);
  return out;
}

}  // namespace geoseg
