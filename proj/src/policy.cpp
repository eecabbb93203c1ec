#include "hop/policy.hpp"

namespace hop {

template class PolicyNet<float>;
template class PolicyNet<double>;

}  // namespace hop
