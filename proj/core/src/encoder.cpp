#include "vclab/encoder.hpp"

namespace vclab {

template class VisualBackbone<float>;
template class VisualBackbone<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace vclab
