#include "unravel/taskgen.hpp"

#include <algorithm>

#include "unravel/error.hpp"
#include "unravel/rng.hpp"

namespace unravel {

std::string_view to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::relu: return "relu";
    case TaskKind::square19: return "square19";
    case TaskKind::index: return "index";
    case TaskKind::prod: return "prod";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "relu") return TaskKind::relu;
  if (name == "square19" || name == "square-19") return TaskKind::square19;
  if (name == "index") return TaskKind::index;
  if (name == "prod") return TaskKind::prod;
  fail(ErrorCode::invalid_argument, "unknown task: " + std::string(name));
}

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::eval: return "eval";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "validation") return Split::validation;
  if (name == "eval") return Split::eval;
  fail(ErrorCode::invalid_argument, "unknown split: " + std::string(name));
}

TaskSpec TaskSpec::relu(int len) {
  return TaskSpec{TaskKind::relu, len, 1, 0, -9, 9};
}

TaskSpec TaskSpec::square19(int len) {
  return TaskSpec{TaskKind::square19, len, 1, 0, -9, 9};
}

TaskSpec TaskSpec::index(int len, int window) {
  return TaskSpec{TaskKind::index, len, window, 0, 0, len - 1};
}

TaskSpec TaskSpec::prod(int operand_digits) {
  return TaskSpec{TaskKind::prod, 2 * operand_digits, 1, operand_digits, 0, 9};
}

int TaskSpec::input_len() const {
  return kind == TaskKind::prod ? 2 * operand_digits : target_len;
}

void TaskSpec::validate() const {
  require(target_len >= 2, "task target length must be at least 2");
  require(input_low <= input_high, "task input bounds are empty");
  switch (kind) {
    case TaskKind::index:
      require(window >= 1 && window <= target_len, "index window must lie in [1, L]");
      require(input_low >= 0 && input_high <= target_len - 1,
              "index inputs must lie in [0, L-1]");
      break;
    case TaskKind::prod:
      require(operand_digits >= 1, "prod needs at least one digit per operand");
      require(target_len == 2 * operand_digits, "prod target length must be 2 * operand digits");
      require(input_low >= 0 && input_high <= 9, "prod inputs are decimal digits");
      break;
    default:
      break;
  }
}

int smod19(long long z) noexcept {
  long long r = (z + 9) % 19;
  if (r < 0) r += 19;
  return static_cast<int>(r - 9);
}

std::vector<int> gen_relu(std::span<const int> x) {
  if (x.empty()) fail(ErrorCode::invalid_argument, "empty input sequence");
  std::vector<int> y(x.size());
  y[0] = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) y[i] = std::max(x[i] + y[i - 1], 0);
  return y;
}

std::vector<int> gen_square19(std::span<const int> x) {
  if (x.empty()) fail(ErrorCode::invalid_argument, "empty input sequence");
  std::vector<int> y(x.size());
  y[0] = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) {
    const long long xi = x[i];
    const long long prev = y[i - 1];
    y[i] = smod19(xi * xi + prev * prev);
  }
  return y;
}

std::vector<int> gen_index(std::span<const int> x, int window) {
  if (x.empty()) fail(ErrorCode::invalid_argument, "empty input sequence");
  const int len = static_cast<int>(x.size());
  require(window >= 1 && window <= len, "index window must lie in [1, L]");
  for (int v : x) {
    if (v < 0 || v >= len) fail(ErrorCode::out_of_range, "index task input out of range");
  }
  std::vector<int> y(x.size());
  y[0] = x[0];
  for (int i = 1; i < len; ++i) {
    long long pointer = 0;
    const int history = std::min(window, i);
    for (int j = 1; j <= history; ++j) pointer += y[i - j];
    y[i] = x[static_cast<std::size_t>(pointer % len)];
  }
  return y;
}

std::vector<int> gen_prod(std::span<const int> a, std::span<const int> b) {
  require(!a.empty() && a.size() == b.size(), "prod operands must have equal nonzero width");
  auto digit_ok = [](int d) { return d >= 0 && d <= 9; };
  if (!std::all_of(a.begin(), a.end(), digit_ok) || !std::all_of(b.begin(), b.end(), digit_ok)) {
    fail(ErrorCode::invalid_argument, "prod operands must be decimal digits");
  }
  const std::size_t n = a.size();
  // Schoolbook multiply on least-significant-first digit arrays.
  std::vector<long long> acc(2 * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      acc[i + j] += static_cast<long long>(a[n - 1 - i]) * b[n - 1 - j];
    }
  }
  std::vector<int> out(2 * n);
  long long carry = 0;
  for (std::size_t k = 0; k < 2 * n; ++k) {
    const long long v = acc[k] + carry;
    out[k] = static_cast<int>(v % 10);
    carry = v / 10;
  }
  return out;
}

std::vector<int> task_target(const TaskSpec& task, std::span<const int> x) {
  switch (task.kind) {
    case TaskKind::relu: return gen_relu(x);
    case TaskKind::square19: return gen_square19(x);
    case TaskKind::index: return gen_index(x, task.window);
    case TaskKind::prod: {
      require(static_cast<int>(x.size()) == 2 * task.operand_digits, "prod input has wrong width");
      const auto n = static_cast<std::size_t>(task.operand_digits);
      return gen_prod(x.subspan(0, n), x.subspan(n, n));
    }
  }
  fail(ErrorCode::invalid_argument, "unknown task kind");
}

Dataset gen_dataset(const TaskSpec& task, std::size_t size, std::uint64_t seed, Split split) {
  task.validate();
  require(size >= 1, "dataset size must be at least 1");
  Dataset ds{task, split, seed, {}};
  ds.examples.reserve(size);
  const int n = task.input_len();
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng = Rng::derive(seed, i);
    Example ex;
    ex.x.resize(static_cast<std::size_t>(n));
    for (auto& v : ex.x) v = static_cast<int>(rng.uniform_int(task.input_low, task.input_high));
    ex.y = task_target(task, ex.x);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

Vocabulary::Vocabulary(std::vector<int> values) : values_(std::move(values)) {
  std::sort(values_.begin(), values_.end());
  values_.erase(std::unique(values_.begin(), values_.end()), values_.end());
  if (values_.empty()) return;
  min_value_ = values_.front();
  lookup_.assign(static_cast<std::size_t>(values_.back() - min_value_ + 1), -1);
  for (std::size_t i = 0; i < values_.size(); ++i) {
    lookup_[static_cast<std::size_t>(values_[i] - min_value_)] = num_special + static_cast<int>(i);
  }
}

bool Vocabulary::contains(int value) const {
  const long long off = static_cast<long long>(value) - min_value_;
  return off >= 0 && off < static_cast<long long>(lookup_.size()) &&
         lookup_[static_cast<std::size_t>(off)] >= 0;
}

int Vocabulary::id_of(int value) const {
  if (!contains(value)) {
    fail(ErrorCode::out_of_range, "out-of-vocabulary value: " + std::to_string(value));
  }
  return lookup_[static_cast<std::size_t>(value - min_value_)];
}

std::optional<int> Vocabulary::value_of(int id) const {
  if (id < num_special || id >= size()) return std::nullopt;
  return values_[static_cast<std::size_t>(id - num_special)];
}

Vocabulary build_vocab(std::span<const Dataset* const> datasets) {
  require(!datasets.empty(), "build_vocab needs at least one dataset");
  std::vector<int> values;
  for (const Dataset* ds : datasets) {
    for (const auto& ex : ds->examples) {
      values.insert(values.end(), ex.x.begin(), ex.x.end());
      values.insert(values.end(), ex.y.begin(), ex.y.end());
    }
  }
  return Vocabulary(std::move(values));
}

Vocabulary build_vocab(std::initializer_list<const Dataset*> datasets) {
  return build_vocab(std::span<const Dataset* const>(datasets.begin(), datasets.size()));
}

Vocabulary task_vocab(const TaskSpec& task) {
  task.validate();
  int low = task.input_low;
  int high = task.input_high;
  switch (task.kind) {
    case TaskKind::relu:
      low = std::min(low, 0);
      high = std::max(high, 0) + std::max(task.input_high, 0) * (task.target_len - 1);
      break;
    case TaskKind::square19:
      low = std::min(low, -9);
      high = std::max(high, 9);
      break;
    case TaskKind::index:
    case TaskKind::prod:
      break;
  }
  std::vector<int> values;
  for (int v = low; v <= high; ++v) values.push_back(v);
  return Vocabulary(std::move(values));
}

}  // namespace unravel
