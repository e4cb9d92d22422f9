# Perforated backpropagation package