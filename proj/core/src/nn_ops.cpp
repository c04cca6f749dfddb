#include "vclab/nn_ops.hpp"

namespace vclab {

template class Linear<float>;
template class Linear<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class GroupNorm<float>;
template class GroupNorm<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiheadAttention<float>;
template class MultiheadAttention<double>;

}  // namespace vclab
