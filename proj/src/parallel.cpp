#include "chimle/parallel.hpp"

namespace chimle {

namespace {
std::atomic<int> g_threads{1};
}

void set_worker_threads(int n) { g_threads = std::max(1, n); }
int worker_threads() { return g_threads.load(); }

}  // namespace chimle
