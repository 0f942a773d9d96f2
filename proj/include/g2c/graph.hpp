// Dependency graphs, dependency-label vocabulary, and the token-pair relation
// matrix consumed by the attention mechanism. Entry (i,j) holds the label
// index of a head->dependent edge, (j,i) holds label index + |G| for the
// reverse direction, 0 means no direct relation. Token positions are shifted
// by one because position 0 is the CLS slot, which also stands in for the
// syntactic root; the final SEP position carries no relations.

#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2c/tensor.hpp"

namespace g2c {

constexpr int kRootHead = -1;

struct DependencyEdge {
  int head = kRootHead;  // token index, or kRootHead
  int dependent = 0;     // token index
  std::string label;
};

struct DependencyGraph {
  int n_tokens = 0;
  std::vector<DependencyEdge> edges;
};

struct GraphDiagnostics {
  bool ok = true;
  std::vector<std::string> problems;
};

// Reports multi-headed tokens, out-of-range indices, self-loops, and
// missing/duplicate root edges.
GraphDiagnostics validate_graph(const DependencyGraph& g);

class LabelVocabulary {
 public:
  LabelVocabulary() = default;
  // Labels are sorted lexicographically and indexed 1..|G|; 0 is reserved
  // for "no relation".
  explicit LabelVocabulary(std::vector<std::string> labels);

  int size() const { return static_cast<int>(labels_.size()); }  // |G|
  const std::vector<std::string>& labels() const { return labels_; }

  int index_of(const std::string& label) const;  // throws VocabularyError
  std::optional<int> find(const std::string& label) const;

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

// Collects the unique labels of every edge in the corpus.
LabelVocabulary build_label_vocabulary(const std::vector<DependencyGraph>& corpus);

struct RelationMatrix {
  int size = 0;  // T, tokenized length including CLS and SEP
  IndexMatrix entries;

  int at(int i, int j) const { return entries.at(i, j); }
};

enum class UnknownLabelPolicy {
  kError,          // throw VocabularyError
  kMapToNoRelation  // use index 0 and count a warning
};

// T must equal g.n_tokens + 2. When `policy` maps unknown labels to zero,
// `unknown_label_count`, if given, receives how many edges were dropped
// that way.
RelationMatrix build_relation_matrix(const DependencyGraph& g, const LabelVocabulary& vocab,
                                     int T,
                                     UnknownLabelPolicy policy = UnknownLabelPolicy::kError,
                                     int* unknown_label_count = nullptr);

// Width of the relation embedding tables: 2|G| + 1.
int relation_onehot_dim(const LabelVocabulary& vocab);

}  // namespace g2c
