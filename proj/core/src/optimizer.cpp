#include "vclab/optimizer.hpp"

namespace vclab {

template class Adam<float>;
template class Adam<double>;

}  // namespace vclab
