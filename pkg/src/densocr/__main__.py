from densocr.cli import main

main()
