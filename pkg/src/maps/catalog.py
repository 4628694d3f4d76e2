# Named map entries and the source each one expands to.
# Entries taking arguments are format templates over their numeric arguments.
catalog = {
    "identity": "x",
    "square": "x^2",
    "half": "x/2",
    "scale": "{0}*x",
    "constant": "{0}",
}

catalog_arity = {
    "identity": 0,
    "square": 0,
    "half": 0,
    "scale": 1,
    "constant": 1,
}
