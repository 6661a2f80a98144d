// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace reagent
{

/// Runs fn(i) for i in [0, n) on up to `width` threads. Results must be written
/// to per-index slots so the outcome does not depend on scheduling. The first
/// exception thrown by any fn is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t width, Fn&& fn)
{
    if (width <= 1 || n <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    auto next = std::atomic<std::size_t> { 0 };
    auto failure = std::exception_ptr {};
    auto failureMutex = std::mutex {};
    auto worker = [&] {
        for (auto i = next++; i < n; i = next++)
        {
            try
            {
                fn(i);
            }
            catch (...)
            {
                auto lock = std::scoped_lock(failureMutex);
                if (!failure)
                    failure = std::current_exception();
                next = n;
            }
        }
    };
    {
        auto threads = std::vector<std::jthread> {};
        for (std::size_t t = 0; t < std::min(width, n); ++t)
            threads.emplace_back(worker);
    }
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace reagent
