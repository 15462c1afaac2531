#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unravel {

enum class TaskKind { relu, square19, index, prod };

std::string_view to_string(TaskKind kind) noexcept;
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::relu;
  int target_len = 0;      // L
  int window = 1;          // d, Index only
  int operand_digits = 0;  // Prod only
  int input_low = -9;      // inclusive bounds for sampled x_i
  int input_high = 9;

  static TaskSpec relu(int len);
  static TaskSpec square19(int len);
  static TaskSpec index(int len, int window);
  static TaskSpec prod(int operand_digits);

  // Length of the raw input sequence stored in Example::x.
  int input_len() const;

  void validate() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct Example {
  std::vector<int> x;
  std::vector<int> y;  // forward order, |y| = L
};

enum class Split { train, validation, eval };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view name);

struct Dataset {
  TaskSpec task;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

// Symmetric residue of z modulo 19, in {-9, ..., 9}.
int smod19(long long z) noexcept;

std::vector<int> gen_relu(std::span<const int> x);
std::vector<int> gen_square19(std::span<const int> x);
std::vector<int> gen_index(std::span<const int> x, int window);
// Operands most-significant digit first; product least-significant digit
// first, zero-padded to 2 * |a|.
std::vector<int> gen_prod(std::span<const int> a, std::span<const int> b);

// Runs the recurrence of `task` on an input sequence.
std::vector<int> task_target(const TaskSpec& task, std::span<const int> x);

Dataset gen_dataset(const TaskSpec& task, std::size_t size, std::uint64_t seed,
                    Split split = Split::train);

// Token ids: the four specials come first, then every observed value in
// ascending order.
class Vocabulary {
 public:
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int sep = 2;
  static constexpr int eos = 3;
  static constexpr int num_special = 4;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<int> values);

  int size() const { return num_special + static_cast<int>(values_.size()); }
  const std::vector<int>& values() const { return values_; }

  bool contains(int value) const;
  int id_of(int value) const;  // throws on out-of-vocabulary values
  std::optional<int> value_of(int id) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.values_ == b.values_; }

 private:
  std::vector<int> values_;
  int min_value_ = 0;
  std::vector<int> lookup_;
};

Vocabulary build_vocab(std::span<const Dataset* const> datasets);
Vocabulary build_vocab(std::initializer_list<const Dataset*> datasets);

// Every value a task can emit or read, so splits share one vocabulary.
Vocabulary task_vocab(const TaskSpec& task);

}  // namespace unravel
