#include "vclab/denoiser.hpp"

namespace vclab {

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace vclab
