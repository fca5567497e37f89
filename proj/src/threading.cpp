#include "qlife/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace qlife {

int max_threads() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("QLIFE_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) hw = std::min(hw, cap);
        } catch (...) {
            // Unparseable value: ignore and keep the hardware count.
        }
    }
    return hw;
}

void parallel_chunks(std::size_t n, int threads,
                     const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace qlife
