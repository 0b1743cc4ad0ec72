#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace metacog {

/// Pulls inputs from `next` in batches, maps them with `work` on up to `jobs`
/// threads, and hands results to `sink` strictly in input order. Output is
/// therefore independent of `jobs`. Memory is bounded by the batch size.
template <typename In, typename Next, typename Work, typename Sink>
void ordered_parallel_map(Next next, int jobs, Work work, Sink sink) {
  using Out = decltype(work(std::declval<In&>()));
  const std::size_t workers = jobs < 1 ? 1 : static_cast<std::size_t>(jobs);
  const std::size_t batch = workers * 4;
  std::vector<In> inputs;
  std::vector<std::optional<Out>> outputs;
  std::vector<std::exception_ptr> errors;
  for (;;) {
    inputs.clear();
    while (inputs.size() < batch) {
      std::optional<In> item = next();
      if (!item) break;
      inputs.push_back(std::move(*item));
    }
    if (inputs.empty()) return;
    outputs.assign(inputs.size(), std::nullopt);
    errors.assign(inputs.size(), nullptr);
    auto run_one = [&](std::size_t i) {
      try {
        outputs[i].emplace(work(inputs[i]));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    };
    if (workers == 1) {
      for (std::size_t i = 0; i < inputs.size(); ++i) run_one(i);
    } else {
      std::atomic<std::size_t> cursor{0};
      std::vector<std::thread> pool;
      const std::size_t n = std::min(workers, inputs.size());
      pool.reserve(n);
      for (std::size_t w = 0; w < n; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = cursor++; i < inputs.size(); i = cursor++) run_one(i);
        });
      }
      for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      sink(std::move(*outputs[i]));
    }
  }
}

}  // namespace metacog
